use std::io::Write;
use std::path::Path;
use std::time::Instant;

use boostwood_core::eval::{self, SimDesign};
use boostwood_core::{
    count_variants, enumerate_patterns, fit_boosted, load_csv, prediction_interval, stop_test,
    variance_estimate, BoostConfig, Dataset, ForestConfig, TargetColumn, TreeConfig,
};

use crate::archive::ModelArchive;
use crate::args::{
    parse_methods, Cli, Command, CvArgs, DataArgs, DesignArg, FitArgs, PredictArgs, SimulateArgs,
    StopTestArgs, VariantsArgs,
};
use crate::error::{usage, CliError, CliResult};
use crate::query::read_features;

const MAX_LISTED_STEPS: usize = 10;

pub fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| usage(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => fit(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Cv(a) => cv(a, out),
        Command::Variants(a) => variants(a, out),
        Command::StopTest(a) => stop(a, out),
    })
}

fn timing(label: &str, start: Instant) {
    eprintln!("# {label} {:.3}s", start.elapsed().as_secs_f64());
}

fn load(args: &DataArgs) -> CliResult<Dataset> {
    Ok(load_csv(
        &args.data,
        &TargetColumn::from_arg(&args.target),
        !args.no_header,
    )?)
}

fn write_output(path: Option<&Path>, text: &str, out: &mut (dyn Write + Send)) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn fit(args: &FitArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let start = Instant::now();
    let data = load(&args.data)?;
    if args.subsample >= data.n() {
        return Err(usage(format!(
            "k must be < n (got --subsample {} with n = {})",
            args.subsample,
            data.n()
        )));
    }
    let forest = ForestConfig {
        tree: args.tree.apply(TreeConfig::default()),
        seed: args.seed,
        ..ForestConfig::new(args.trees, args.subsample)
    };
    let config = BoostConfig::new(forest, args.boost.pattern()?, args.boost.residuals.into());
    let model = fit_boosted(&data, &config)?;

    writeln!(
        out,
        "fitted {} stage(s) x {} trees on {} rows, {} features",
        model.stages().len(),
        args.trees,
        data.n(),
        data.d()
    )?;
    writeln!(
        out,
        "pattern {}, residuals {}",
        model.pattern(),
        config.residual_mode.name()
    )?;
    for (j, stage) in model.stages().iter().enumerate() {
        let target = model.residuals(&data, j)?;
        let oob = stage.predict_oob(&data.with_response(target.clone())?)?;
        let mse = oob
            .values
            .iter()
            .zip(&target)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / data.n() as f64;
        writeln!(
            out,
            "stage {j}: oob mse {mse:.6} ({} rows without oob trees)",
            oob.fallback_count()
        )?;
    }
    writeln!(out, "in-sample residual mse {:.6}", model.residual_mse())?;
    ModelArchive::new(&model, &data).save(&args.out)?;
    writeln!(out, "wrote {}", args.out.display())?;
    timing("fit", start);
    Ok(())
}

fn predict(args: &PredictArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let start = Instant::now();
    let archive = ModelArchive::load(&args.model)?;
    let model = archive.model()?;
    let rows = read_features(&args.data, !args.no_header, &archive.training.feature_names)?;
    let mut text = String::from("estimate,v_ij,zeta_kk_over_b,variance,lower,upper\n");
    for x in &rows {
        let pv = variance_estimate(&model, x)?;
        let interval = prediction_interval(pv.estimate, pv.total, model.residual_mse(), args.level)?;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            pv.estimate,
            pv.v_ij,
            pv.monte_carlo(),
            pv.total,
            interval.lower,
            interval.upper
        ));
    }
    write_output(args.out.as_deref(), &text, out)?;
    timing("predict", start);
    Ok(())
}

fn simulate(args: &SimulateArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let start = Instant::now();
    let mut design = match args.design {
        DesignArg::Linear => SimDesign::linear(),
        DesignArg::Norm => SimDesign::norm(),
    };
    design.noise_sd = args.noise_sd;
    design.n = args.n;
    design.trees = args.trees;
    design.subsample = args.subsample;
    design.replicates = args.replicates;
    design.tree = args.tree.apply(design.tree.clone());
    design.validate()?;
    let methods = parse_methods(&args.methods, &design.forest())?;
    let report = eval::run_simulation(&design, &methods, args.seed)?;
    out.write_all(report.to_text().as_bytes())?;
    if let Some(path) = &args.out {
        write_output(Some(path), &report.to_csv(), out)?;
    }
    timing("simulate", start);
    Ok(())
}

fn cv(args: &CvArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let start = Instant::now();
    let data = load(&args.data)?;
    if args.folds < 2 || args.folds > data.n() {
        return Err(usage(format!(
            "--folds must be between 2 and n = {}, got {}",
            data.n(),
            args.folds
        )));
    }
    let smallest_train = data.n() - data.n().div_ceil(args.folds);
    if args.subsample >= smallest_train {
        return Err(usage(format!(
            "k must be < n (got --subsample {} with {} training rows per fold)",
            args.subsample, smallest_train
        )));
    }
    let forest = ForestConfig {
        tree: args.tree.apply(TreeConfig::default()),
        ..ForestConfig::new(args.trees, args.subsample)
    };
    let methods = parse_methods(&args.methods, &forest)?;
    let report = eval::run_cv_benchmark(&data, &methods, args.folds, args.seed)?;
    out.write_all(report.to_text().as_bytes())?;
    if let Some(path) = &args.out {
        write_output(Some(path), &report.to_csv(), out)?;
    }
    timing("cv", start);
    Ok(())
}

fn variants(args: &VariantsArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if !args.count_only && args.steps > MAX_LISTED_STEPS {
        return Err(usage(format!(
            "listing patterns is limited to M <= {MAX_LISTED_STEPS}; use --count-only"
        )));
    }
    writeln!(out, "{}", count_variants(args.steps))?;
    if args.count_only {
        return Ok(());
    }
    for p in enumerate_patterns(args.steps) {
        let labels: Vec<String> = p.iter().map(usize::to_string).collect();
        writeln!(out, "{}", labels.join(","))?;
    }
    Ok(())
}

fn stop(args: &StopTestArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let start = Instant::now();
    let archive = ModelArchive::load(&args.model)?;
    let model = archive.model()?;
    let data = load(&args.data)?;
    if data.n() != model.training_n() || data.d() != model.d() {
        return Err(boostwood_core::Error::InvalidData(format!(
            "model was trained on {} rows with {} features, data has {} rows with {}",
            model.training_n(),
            model.d(),
            data.n(),
            data.d()
        ))
        .into());
    }
    let points = read_features(&args.points, !args.data.no_header, &archive.training.feature_names)?;
    let extra = model.fit_next_stage(&data, args.share)?;
    let outcome = stop_test(&model, &extra, &points, args.level)?;
    writeln!(out, "statistic {}", outcome.statistic)?;
    writeln!(out, "threshold {}", outcome.threshold)?;
    writeln!(out, "df {}", outcome.degrees_of_freedom)?;
    writeln!(
        out,
        "decision {}",
        if outcome.continue_boosting { "continue" } else { "stop" }
    )?;
    timing("stop-test", start);
    Ok(())
}
