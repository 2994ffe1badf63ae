//! Simulation study, cross-validation benchmark and interval metrics.
//!
//! The simulation draws `X ~ U([-1, 1]^d)` and `Y = F(X) + N(0, sigma^2)` afresh in
//! every replicate, fits each method and records the estimate and variance
//! estimate at fixed test points. The report aggregates, per method and point:
//!
//! * mean bias `mean(F_hat) - F(p)`
//! * mean variance estimate and its ratio to the empirical variance of `F_hat`
//! * the Kolmogorov-Smirnov distance of `F_hat` from `N(F(p), mean(V_hat))`, and
//!   from `N(mean(F_hat), mean(V_hat))`
//! * coverage of `F_hat +- z sqrt(V_hat)`
//! * performance improvement over the first method, from `(F_hat - F)^2 + V_hat`

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::boost::{fit_boosted, fit_boosted_with_base, BoostConfig, ResidualMode, SharingPattern};
use crate::data::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::forest::{ForestConfig, ForestStage};
use crate::rng;
use crate::tree::TreeConfig;
use crate::variance::variance_estimate;

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided critical value for a central interval of probability `level`.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("level must be in (0, 1), got {level}")));
    }
    Ok(normal_quantile(0.5 + level / 2.0))
}

/// One-sample Kolmogorov-Smirnov distance between `samples` and
/// `N(mean, variance)`.
pub fn ks_normality(samples: &[f64], mean: f64, variance: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("KS distance needs at least one sample"));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Numeric(format!(
            "KS distance needs a positive variance, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|s| (s - mean) / sd).collect();
    z.sort_unstable_by(f64::total_cmp);
    let m = z.len() as f64;
    Ok(z.iter().enumerate().fold(0.0, |d, (i, &zi)| {
        let phi = normal_cdf(zi);
        let i = i as f64;
        d.max((i + 1.0) / m - phi).max(phi - i / m)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// `estimate +- z_level sqrt(variance + residual_mse)`.
pub fn prediction_interval(estimate: f64, variance: f64, residual_mse: f64, level: f64) -> Result<Interval> {
    if variance.is_nan() || variance < 0.0 || residual_mse.is_nan() || residual_mse < 0.0 {
        return Err(Error::Numeric(format!(
            "interval needs non-negative variances, got {variance} and {residual_mse}"
        )));
    }
    let half = critical_value(level)? * (variance + residual_mse).sqrt();
    Ok(Interval {
        lower: estimate - half,
        upper: estimate + half,
    })
}

/// `100 (1 - sum(candidate) / sum(baseline))`.
pub fn performance_improvement(mse_candidate: &[f64], mse_baseline: &[f64]) -> Result<f64> {
    if mse_candidate.len() != mse_baseline.len() {
        return Err(Error::InvalidData(format!(
            "{} candidate values for {} baseline values",
            mse_candidate.len(),
            mse_baseline.len()
        )));
    }
    let base: f64 = mse_baseline.iter().sum();
    if base == 0.0 || !base.is_finite() {
        return Err(Error::Numeric(format!("baseline MSE sum is {base}")));
    }
    Ok(100.0 * (1.0 - mse_candidate.iter().sum::<f64>() / base))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// `x_1 + ... + x_5`.
    LinearSumFirst5,
    /// Euclidean norm of `x`.
    L2Norm,
    Constant(f64),
}

impl Signal {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Signal::LinearSumFirst5 => x.iter().take(5).sum(),
            Signal::L2Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Signal::Constant(c) => *c,
        }
    }
}

/// The points `0`, `(1/3, 0, ..)`, `c 1`, `2 c 1` and `3 c 1` with `c = 1 / (3 sqrt(d))`.
pub fn standard_test_points(d: usize) -> Vec<Vec<f64>> {
    let mut p2 = vec![0.0; d];
    p2[0] = 1.0 / 3.0;
    let c = 1.0 / (3.0 * (d as f64).sqrt());
    let mut points = vec![vec![0.0; d], p2];
    points.extend((1..=3).map(|m| vec![m as f64 * c; d]));
    points
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub d: usize,
    pub signal: Signal,
    pub noise_sd: f64,
    pub test_points: Vec<Vec<f64>>,
    pub replicates: usize,
    /// Trees per stage.
    pub trees: usize,
    pub subsample: usize,
    pub tree: TreeConfig,
}

impl SimDesign {
    fn desk(signal: Signal) -> Self {
        SimDesign {
            n: 500,
            d: 15,
            signal,
            noise_sd: 1.0,
            test_points: standard_test_points(15),
            replicates: 200,
            trees: 2000,
            subsample: 100,
            tree: TreeConfig {
                min_leaf: 10,
                ..TreeConfig::default()
            },
        }
    }

    /// `Y = x_1 + ... + x_5 + N(0, 1)` on `[-1, 1]^15`, n = 500, k = 100, B = 2000,
    /// 200 replicates, leaves of at least 10 rows.
    pub fn linear() -> Self {
        Self::desk(Signal::LinearSumFirst5)
    }

    /// As [`SimDesign::linear`] with `Y = |x| + N(0, 1)`.
    pub fn norm() -> Self {
        Self::desk(Signal::L2Norm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if self.n < 2 || self.d == 0 {
            return Err(Error::config("design needs n >= 2 and d >= 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config(format!("noise sd must be >= 0, got {}", self.noise_sd)));
        }
        if self.test_points.is_empty() {
            return Err(Error::config("design needs at least one test point"));
        }
        if let Some(p) = self.test_points.iter().find(|p| p.len() != self.d) {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: p.len(),
            });
        }
        if self.trees < 2 {
            return Err(Error::config("variance estimates need at least two trees"));
        }
        if self.subsample == 0 || self.subsample > self.n {
            return Err(Error::config(format!(
                "subsample size {} must be in 1..={}",
                self.subsample, self.n
            )));
        }
        self.tree.validate(self.d)
    }

    pub fn truths(&self) -> Vec<f64> {
        self.test_points.iter().map(|p| self.signal.value(p)).collect()
    }

    /// Forest settings shared by the standard methods.
    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            tree: self.tree.clone(),
            ..ForestConfig::new(self.trees, self.subsample)
        }
    }

    /// Draws one training set.
    pub fn generate(&self, rng: &mut impl Rng) -> Dataset {
        let mut features = Vec::with_capacity(self.n * self.d);
        let mut response = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let start = features.len();
            features.extend((0..self.d).map(|_| rng.gen_range(-1.0..=1.0)));
            let noise: f64 = rng.sample(StandardNormal);
            response.push(self.signal.value(&features[start..]) + self.noise_sd * noise);
        }
        Dataset::from_flat(features, self.d, response).expect("generated data is well formed")
    }
}

/// A named model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub config: BoostConfig,
}

impl Method {
    pub fn new(name: impl Into<String>, config: BoostConfig) -> Self {
        Method {
            name: name.into(),
            config,
        }
    }

    pub fn random_forest(forest: ForestConfig) -> Self {
        Self::new("RF", BoostConfig::random_forest(forest))
    }

    /// One boosting step reusing the base subsamples.
    pub fn variant1(forest: ForestConfig) -> Self {
        Self::new(
            "BFv1",
            BoostConfig::new(forest, SharingPattern::same(1), ResidualMode::Oob),
        )
    }

    /// One boosting step with fresh subsamples.
    pub fn variant2(forest: ForestConfig) -> Self {
        Self::new(
            "BFv2",
            BoostConfig::new(forest, SharingPattern::independent(1), ResidualMode::Oob),
        )
    }

    /// One boosting step with fresh subsamples and the given residual mode.
    pub fn residual_mode(forest: ForestConfig, mode: ResidualMode) -> Self {
        let name = match mode {
            ResidualMode::Oob => "BFoob",
            ResidualMode::Inbag => "BFinbag",
            ResidualMode::Bootstrap => "BFboot",
        };
        Self::new(
            name,
            BoostConfig::new(forest, SharingPattern::independent(1), mode),
        )
    }

    /// RF, BFv1 and BFv2 on the same forest settings.
    pub fn standard(forest: &ForestConfig) -> Vec<Method> {
        vec![
            Self::random_forest(forest.clone()),
            Self::variant1(forest.clone()),
            Self::variant2(forest.clone()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub method: String,
    /// Index into the design's test points.
    pub point: usize,
    pub truth: f64,
    pub mean_bias: f64,
    pub mean_variance_estimate: f64,
    /// `mean(V_hat) / var(F_hat)`, NaN when undefined.
    pub variance_ratio: f64,
    /// KS distance from `N(F(p), mean(V_hat))`; NaN when the mean variance
    /// estimate is zero.
    pub ks_statistic: f64,
    /// KS distance from `N(mean(F_hat), mean(V_hat))`.
    pub ks_sample_mean: f64,
    pub coverage_95: f64,
    /// Relative to the first method.
    pub performance_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub methods: Vec<String>,
    pub test_points: Vec<Vec<f64>>,
    pub truths: Vec<f64>,
    /// `estimates[method][point][replicate]`.
    pub estimates: Vec<Vec<Vec<f64>>>,
    /// Total variance estimates, same layout as `estimates`.
    pub variances: Vec<Vec<Vec<f64>>>,
    pub rows: Vec<SimRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

impl SimReport {
    /// Aggregates per-replicate estimates and variances into report rows.
    pub fn from_samples(
        methods: Vec<String>,
        test_points: Vec<Vec<f64>>,
        truths: Vec<f64>,
        estimates: Vec<Vec<Vec<f64>>>,
        variances: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let q = test_points.len();
        let shape_ok = truths.len() == q
            && estimates.len() == methods.len()
            && variances.len() == methods.len()
            && estimates.iter().chain(&variances).all(|m| m.len() == q)
            && estimates
                .iter()
                .zip(&variances)
                .all(|(e, v)| e.iter().zip(v).all(|(a, b)| a.len() == b.len() && !a.is_empty()));
        if !shape_ok || methods.is_empty() {
            return Err(Error::InvalidData("simulation samples have inconsistent shapes".into()));
        }
        let z = critical_value(0.95)?;
        let mse = |m: usize, p: usize| -> Vec<f64> {
            estimates[m][p]
                .iter()
                .zip(&variances[m][p])
                .map(|(f, v)| (f - truths[p]).powi(2) + v)
                .collect()
        };

        let mut rows = Vec::with_capacity(methods.len() * q);
        for (m, name) in methods.iter().enumerate() {
            for p in 0..q {
                let est = &estimates[m][p];
                let var = &variances[m][p];
                let mean_est = mean(est);
                let mean_var = mean(var);
                let spread = sample_variance(est);
                let variance_ratio = if spread > 0.0 { mean_var / spread } else { f64::NAN };
                let ks_statistic = ks_normality(est, truths[p], mean_var).unwrap_or(f64::NAN);
                let ks_sample_mean = ks_normality(est, mean_est, mean_var).unwrap_or(f64::NAN);
                let covered = est
                    .iter()
                    .zip(var)
                    .filter(|(f, v)| (*f - truths[p]).abs() <= z * v.sqrt())
                    .count();
                let baseline = mse(0, p);
                let performance_improvement = if m == 0 {
                    0.0
                } else {
                    performance_improvement(&mse(m, p), &baseline).unwrap_or(f64::NAN)
                };
                rows.push(SimRow {
                    method: name.clone(),
                    point: p,
                    truth: truths[p],
                    mean_bias: mean_est - truths[p],
                    mean_variance_estimate: mean_var,
                    variance_ratio,
                    ks_statistic,
                    ks_sample_mean,
                    coverage_95: 100.0 * covered as f64 / est.len() as f64,
                    performance_improvement,
                });
            }
        }
        Ok(SimReport {
            methods,
            test_points,
            truths,
            estimates,
            variances,
            rows,
        })
    }

    pub fn row(&self, method: &str, point: usize) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.method == method && r.point == point)
    }

    pub fn replicates(&self) -> usize {
        self.estimates[0][0].len()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,point,truth,bias,v_ij,v_ij_ratio,ks,ks_sample_mean,coverage,pi\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},p{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.point + 1,
                r.truth,
                r.mean_bias,
                r.mean_variance_estimate,
                r.variance_ratio,
                r.ks_statistic,
                r.ks_sample_mean,
                r.coverage_95,
                r.performance_improvement
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:>5} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>9}\n",
            "method", "point", "bias", "V_IJ", "V_IJ/V(F)", "K.S.", "K.S.(m)", "C.C.", "P.I.(%)"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>5} {:>10.4} {:>10.4} {:>10.3} {:>8.4} {:>8.4} {:>8.1} {:>9.2}\n",
                r.method,
                format!("p{}", r.point + 1),
                r.mean_bias,
                r.mean_variance_estimate,
                r.variance_ratio,
                r.ks_statistic,
                r.ks_sample_mean,
                r.coverage_95,
                r.performance_improvement
            ));
        }
        out
    }
}

/// Runs the simulation study. Each method's base forest takes its tree count
/// and subsample size from the design; its tree settings are kept. Replicate
/// `r` draws its data from a stream keyed by `(seed, r)` and all methods use
/// the same model seed within a replicate, so methods that agree on stage 0
/// share it.
pub fn run_simulation(design: &SimDesign, methods: &[Method], seed: u64) -> Result<SimReport> {
    design.validate()?;
    if methods.is_empty() {
        return Err(Error::config("simulation needs at least one method"));
    }
    let configs: Vec<BoostConfig> = methods
        .iter()
        .map(|m| {
            let mut c = m.config.clone();
            c.forest.trees = design.trees;
            c.forest.subsample = design.subsample;
            c.validate(design.n, design.d).map(|_| c)
        })
        .collect::<Result<_>>()?;

    let data_seed = rng::derive(seed, 0xDA7A);
    let model_seed = rng::derive(seed, 0x5EED);
    // per replicate: [method][point] -> (estimate, variance)
    let results: Vec<Vec<Vec<(f64, f64)>>> = (0..design.replicates)
        .into_par_iter()
        .map(|r| {
            let mut data_rng = rng::stream(data_seed, r as u64);
            let data = design.generate(&mut data_rng);
            let mut bases: Vec<ForestStage> = Vec::new();
            configs
                .iter()
                .map(|config| {
                    let mut config = config.clone();
                    config.forest.seed = rng::derive(model_seed, r as u64);
                    let stage0 = config.stage_forest(0);
                    let base = bases.iter().find(|b| b.config() == &stage0);
                    let model = fit_boosted_with_base(&data, &config, base)?;
                    if base.is_none() {
                        bases.push(model.stages()[0].clone());
                    }
                    design
                        .test_points
                        .iter()
                        .map(|p| variance_estimate(&model, p).map(|v| (v.estimate, v.total)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let q = design.test_points.len();
    let collect = |pick: fn(&(f64, f64)) -> f64| -> Vec<Vec<Vec<f64>>> {
        (0..methods.len())
            .map(|m| {
                (0..q)
                    .map(|p| results.iter().map(|rep| pick(&rep[m][p])).collect())
                    .collect()
            })
            .collect()
    };
    SimReport::from_samples(
        methods.iter().map(|m| m.name.clone()).collect(),
        design.test_points.clone(),
        design.truths(),
        collect(|v| v.0),
        collect(|v| v.1),
    )
}

/// RF against the one-step independent-subsample forest built with oob,
/// inbag and bootstrap residuals.
pub fn compare_residual_modes(design: &SimDesign, seed: u64) -> Result<SimReport> {
    let forest = design.forest();
    let mut methods = vec![Method::random_forest(forest.clone())];
    methods.extend(
        [ResidualMode::Oob, ResidualMode::Inbag, ResidualMode::Bootstrap]
            .into_iter()
            .map(|mode| Method::residual_mode(forest.clone(), mode)),
    );
    run_simulation(design, &methods, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub method: String,
    /// Mean held-out squared error.
    pub mse: f64,
    /// Improvement of held-out squared error over the first method, in percent.
    pub improvement: f64,
    pub pi_length: f64,
    /// Percentage of held-out responses inside their prediction interval.
    pub pi_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub rows: Vec<CvRow>,
}

impl CvReport {
    pub fn row(&self, method: &str) -> Option<&CvRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mse,improvement,pi_length,pi_coverage\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method, r.mse, r.improvement, r.pi_length, r.pi_coverage
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:>12} {:>14} {:>10} {:>12}\n",
            "method", "MSE", "improvement%", "PI length", "PI coverage"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>12.5} {:>14.2} {:>10.4} {:>12.2}\n",
                r.method, r.mse, r.improvement, r.pi_length, r.pi_coverage
            ));
        }
        out
    }
}

/// K-fold cross-validation. Each fold fits every method on the training rows
/// and predicts the held-out rows with 95% prediction intervals whose
/// residual term is the model's in-sample mean squared residual. The first
/// method is the baseline for the improvement column.
pub fn run_cv_benchmark(data: &Dataset, methods: &[Method], folds: usize, seed: u64) -> Result<CvReport> {
    if methods.is_empty() {
        return Err(Error::config("benchmark needs at least one method"));
    }
    if folds < 2 {
        return Err(Error::config("cross-validation needs at least two folds"));
    }
    let plan = make_folds(data.n(), folds, seed)?;
    let z = critical_value(0.95)?;
    let model_seed = rng::derive(seed, 0xC5);

    // [method] -> (squared errors, interval lengths, covered flags)
    let mut sq: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let mut len: Vec<Vec<f64>> = vec![Vec::new(); methods.len()];
    let mut hit: Vec<usize> = vec![0; methods.len()];
    for f in 0..folds {
        let train = data.subset(&plan.train_indices(f))?;
        let test_idx = plan.test_indices(f);
        for (m, method) in methods.iter().enumerate() {
            let mut config = method.config.clone();
            config.forest.seed = rng::derive(model_seed, f as u64);
            let model = fit_boosted(&train, &config)?;
            let ve = model.residual_mse();
            for &i in &test_idx {
                let pv = variance_estimate(&model, data.row(i))?;
                let y = data.response()[i];
                let half = z * (pv.total + ve).sqrt();
                sq[m].push((pv.estimate - y).powi(2));
                len[m].push(2.0 * half);
                if (pv.estimate - y).abs() <= half {
                    hit[m] += 1;
                }
            }
        }
    }

    let rows = methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let improvement = if m == 0 {
                0.0
            } else {
                performance_improvement(&sq[m], &sq[0]).unwrap_or(f64::NAN)
            };
            CvRow {
                method: method.name.clone(),
                mse: mean(&sq[m]),
                improvement,
                pi_length: mean(&len[m]),
                pi_coverage: 100.0 * hit[m] as f64 / data.n() as f64,
            }
        })
        .collect();
    Ok(CvReport { folds, rows })
}
