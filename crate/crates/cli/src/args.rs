use std::path::PathBuf;

use boostwood_core::eval::Method;
use boostwood_core::{ForestConfig, ResidualMode, SharingPattern, TreeConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "boostwood",
    version,
    about = "Boosted random forests with infinitesimal-jackknife variance estimates"
)]
pub struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true, env = "BOOSTWOOD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a boosted forest and save it as a JSON archive.
    Fit(FitArgs),
    /// Predict with variance estimates and prediction intervals.
    Predict(PredictArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
    /// K-fold cross-validation benchmark against a random forest.
    Cv(CvArgs),
    /// Count and list subsample-sharing patterns for M boosting steps.
    Variants(VariantsArgs),
    /// Test whether one more boosting step is worthwhile.
    StopTest(StopTestArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by header name or zero-based index.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// The CSV file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Candidate features per split [default: ceil(d/3)].
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Minimum rows per leaf [default: 5; 10 for `simulate`].
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

impl TreeArgs {
    pub fn apply(&self, mut base: TreeConfig) -> TreeConfig {
        if self.mtry.is_some() {
            base.mtry = self.mtry;
        }
        if let Some(m) = self.min_leaf {
            base.min_leaf = m;
        }
        if self.max_depth.is_some() {
            base.max_depth = self.max_depth;
        }
        base
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResidualArg {
    Oob,
    Inbag,
    Bootstrap,
}

impl From<ResidualArg> for ResidualMode {
    fn from(r: ResidualArg) -> Self {
        match r {
            ResidualArg::Oob => ResidualMode::Oob,
            ResidualArg::Inbag => ResidualMode::Inbag,
            ResidualArg::Bootstrap => ResidualMode::Bootstrap,
        }
    }
}

#[derive(Debug, Args)]
pub struct BoostArgs {
    /// Boosting steps after the base forest [default: 1, or implied by a pattern].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Subsample sharing: same, independent or pattern:0,1,1.
    #[arg(long, default_value = "independent")]
    pub variant: String,
    #[arg(long, value_enum, default_value = "oob")]
    pub residuals: ResidualArg,
}

impl BoostArgs {
    pub fn pattern(&self) -> CliResult<SharingPattern> {
        parse_variant(&self.variant, self.steps)
    }
}

pub fn parse_variant(variant: &str, steps: Option<usize>) -> CliResult<SharingPattern> {
    match variant {
        "same" => Ok(SharingPattern::same(steps.unwrap_or(1))),
        "independent" => Ok(SharingPattern::independent(steps.unwrap_or(1))),
        other => {
            let Some(list) = other.strip_prefix("pattern:") else {
                return Err(usage(format!(
                    "--variant must be same, independent or pattern:<labels>, got {other:?}"
                )));
            };
            let pattern = SharingPattern::parse(list).map_err(|e| usage(e.to_string()))?;
            if let Some(s) = steps {
                if s != pattern.steps() {
                    return Err(usage(format!(
                        "pattern {pattern} has {} steps but --steps is {s}",
                        pattern.steps()
                    )));
                }
            }
            Ok(pattern)
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trees per stage.
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    /// Subsample size k (< n).
    #[arg(long)]
    pub subsample: usize,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[command(flatten)]
    pub boost: BoostArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Archive path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Archive written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV; with a header, columns are matched to the model's features by name.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub no_header: bool,
    /// Prediction interval coverage.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignArg {
    /// Y = x1 + ... + x5 + noise on [-1, 1]^15.
    Linear,
    /// Y = |x| + noise on [-1, 1]^15.
    Norm,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub design: DesignArg,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    /// Training rows per replicate.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub trees: usize,
    #[arg(long, default_value_t = 100)]
    pub subsample: usize,
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Comma-separated methods: rf, bfv1, bfv2, oob, inbag, boot. The first is the baseline.
    #[arg(long, default_value = "rf,bfv1,bfv2")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    #[arg(long)]
    pub subsample: usize,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Comma-separated methods: rf, bfv1, bfv2, oob, inbag, boot. The first is the baseline.
    #[arg(long, default_value = "rf,bfv1,bfv2")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariantsArgs {
    /// Boosting steps M.
    pub steps: usize,
    /// Print only the count.
    #[arg(long)]
    pub count_only: bool,
}

#[derive(Debug, Args)]
pub struct StopTestArgs {
    /// Archive written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// The model's training data.
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV of test points, same layout rules as `predict`.
    #[arg(long)]
    pub points: PathBuf,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Reuse the subsamples of this sharing label instead of drawing fresh ones.
    #[arg(long)]
    pub share: Option<usize>,
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str, forest: &ForestConfig) -> CliResult<Vec<Method>> {
    let methods = list
        .split(',')
        .map(|m| match m.trim() {
            "rf" => Ok(Method::random_forest(forest.clone())),
            "bfv1" => Ok(Method::variant1(forest.clone())),
            "bfv2" => Ok(Method::variant2(forest.clone())),
            "oob" => Ok(Method::residual_mode(forest.clone(), ResidualMode::Oob)),
            "inbag" => Ok(Method::residual_mode(forest.clone(), ResidualMode::Inbag)),
            "boot" => Ok(Method::residual_mode(forest.clone(), ResidualMode::Bootstrap)),
            other => Err(usage(format!("unknown method {other:?}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(methods)
}
