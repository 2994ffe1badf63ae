//! Multi-stage boosted forests.
//!
//! Stage 0 is an ordinary random forest on `(Y, X)`. Stage `j >= 1` is a forest
//! on `(e_j, X)` where `e_j = Y - sum_{l<j} pred_l(X)` and `pred_l` is stage
//! `l`'s out-of-bag, in-bag or bootstrap prediction depending on the residual
//! mode. The model predicts the plain sum of all stages; there is no shrinkage.
//!
//! A [`SharingPattern`] says which stages reuse the same subsample index sets:
//! stages with equal labels share them, so `[0, 0]` reuses the base forest's
//! subsamples in the boosting stage and `[0, 1]` draws fresh ones. Patterns are
//! restricted-growth strings, which makes each sharing structure appear once.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig, ForestStage, Inclusion, Resampling};
use crate::variance;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// Residuals from each stage's out-of-bag predictions.
    #[default]
    Oob,
    /// Residuals from full-forest (in-bag) predictions.
    Inbag,
    /// Full bootstrap resamples in every stage, residuals from full-forest predictions.
    Bootstrap,
}

impl ResidualMode {
    pub fn name(self) -> &'static str {
        match self {
            ResidualMode::Oob => "oob",
            ResidualMode::Inbag => "inbag",
            ResidualMode::Bootstrap => "bootstrap",
        }
    }
}

impl std::str::FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oob" => Ok(ResidualMode::Oob),
            "inbag" => Ok(ResidualMode::Inbag),
            "bootstrap" => Ok(ResidualMode::Bootstrap),
            other => Err(Error::config(format!("unknown residual mode {other:?}"))),
        }
    }
}

/// Canonical subsample-sharing labels, one per stage.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SharingPattern(Vec<usize>);

impl SharingPattern {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("pattern needs at least one stage"));
        }
        let mut next = 0;
        for (j, &l) in labels.iter().enumerate() {
            if l > next {
                return Err(Error::config(format!(
                    "pattern {labels:?} is not canonical: label {l} at stage {j} skips ahead"
                )));
            }
            if l == next {
                next += 1;
            }
        }
        Ok(SharingPattern(labels))
    }

    /// Every stage reuses the base forest's subsamples.
    pub fn same(steps: usize) -> Self {
        SharingPattern(vec![0; steps + 1])
    }

    /// Every stage draws fresh subsamples.
    pub fn independent(steps: usize) -> Self {
        SharingPattern((0..=steps).collect())
    }

    /// Parses a comma-separated label list such as `0,1,1`.
    pub fn parse(s: &str) -> Result<Self> {
        let labels = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad pattern label {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len() - 1
    }

    pub fn group_count(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    /// Stage indices grouped by label, in label order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.group_count()];
        for (j, &l) in self.0.iter().enumerate() {
            groups[l].push(j);
        }
        groups
    }
}

impl TryFrom<Vec<usize>> for SharingPattern {
    type Error = Error;

    fn try_from(labels: Vec<usize>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<SharingPattern> for Vec<usize> {
    fn from(p: SharingPattern) -> Self {
        p.0
    }
}

impl std::fmt::Display for SharingPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Replaces the forest settings of one stage. The seed is always taken from
/// the base forest config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOverride {
    pub stage: usize,
    pub forest: ForestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub pattern: SharingPattern,
    pub residual_mode: ResidualMode,
    pub forest: ForestConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_overrides: Vec<StageOverride>,
}

impl BoostConfig {
    pub fn new(forest: ForestConfig, pattern: SharingPattern, residual_mode: ResidualMode) -> Self {
        BoostConfig {
            pattern,
            residual_mode,
            forest,
            stage_overrides: Vec::new(),
        }
    }

    /// A plain random forest (no boosting steps).
    pub fn random_forest(forest: ForestConfig) -> Self {
        Self::new(forest, SharingPattern::same(0), ResidualMode::Oob)
    }

    pub fn steps(&self) -> usize {
        self.pattern.steps()
    }

    /// Effective forest settings of `stage`.
    pub fn stage_forest(&self, stage: usize) -> ForestConfig {
        let mut config = self
            .stage_overrides
            .iter()
            .rev()
            .find(|o| o.stage == stage)
            .map_or_else(|| self.forest.clone(), |o| o.forest.clone());
        config.seed = self.forest.seed;
        if self.residual_mode == ResidualMode::Bootstrap {
            config.resampling = Resampling::Bootstrap;
        }
        config
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if let Some(o) = self.stage_overrides.iter().find(|o| o.stage > self.steps()) {
            return Err(Error::config(format!(
                "override for stage {} but the model has {} stages",
                o.stage,
                self.steps() + 1
            )));
        }
        let configs: Vec<ForestConfig> = (0..=self.steps()).map(|j| self.stage_forest(j)).collect();
        for c in &configs {
            c.validate(n, d)?;
        }
        for group in self.pattern.groups() {
            let first = &configs[group[0]];
            for &j in &group[1..] {
                let c = &configs[j];
                if (c.trees, c.sample_size(n), c.resampling)
                    != (first.trees, first.sample_size(n), first.resampling)
                {
                    return Err(Error::config(format!(
                        "stages {} and {j} share subsamples but disagree on trees, \
                         subsample size or resampling",
                        group[0]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedForest {
    stages: Vec<ForestStage>,
    config: BoostConfig,
    training_n: usize,
    /// In-sample mean squared residual of the full model on its training rows.
    residual_mse: f64,
}

impl BoostedForest {
    pub fn from_parts(
        stages: Vec<ForestStage>,
        config: BoostConfig,
        training_n: usize,
        residual_mse: f64,
    ) -> Result<Self> {
        if stages.len() != config.pattern.labels().len() {
            return Err(Error::InvalidData(format!(
                "{} stages for a pattern of length {}",
                stages.len(),
                config.pattern.labels().len()
            )));
        }
        let d = stages[0].d();
        if stages.iter().any(|s| s.d() != d || s.inclusion().n() != training_n) {
            return Err(Error::InvalidData("stages disagree on dimensions".into()));
        }
        for group in config.pattern.groups() {
            let first = stages[group[0]].inclusion();
            if group.iter().any(|&j| stages[j].inclusion() != first) {
                return Err(Error::InvalidData(
                    "stages sharing a label have different subsamples".into(),
                ));
            }
        }
        Ok(BoostedForest {
            stages,
            config,
            training_n,
            residual_mse,
        })
    }

    pub fn stages(&self) -> &[ForestStage] {
        &self.stages
    }

    pub fn config(&self) -> &BoostConfig {
        &self.config
    }

    pub fn pattern(&self) -> &SharingPattern {
        &self.config.pattern
    }

    pub fn training_n(&self) -> usize {
        self.training_n
    }

    pub fn d(&self) -> usize {
        self.stages[0].d()
    }

    pub fn residual_mse(&self) -> f64 {
        self.residual_mse
    }

    /// Sum of the stage predictions, in stage order.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.stages.iter().map(|s| s.predict(x)).sum()
    }

    pub fn stage_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.stages.iter().map(|s| s.predict(x)).collect()
    }

    /// Replays the residuals stage `upto` was (or would be) trained on.
    pub fn residuals(&self, data: &Dataset, upto: usize) -> Result<Vec<f64>> {
        if data.n() != self.training_n {
            return Err(Error::InvalidData(format!(
                "model was trained on {} rows, got {}",
                self.training_n,
                data.n()
            )));
        }
        let mut residual = data.response().to_vec();
        for (j, stage) in self.stages.iter().take(upto).enumerate() {
            let stage_data = if j == 0 {
                data.clone()
            } else {
                data.with_response(residual.clone())?
            };
            let preds = stage_fit_values(stage, &stage_data, self.config.residual_mode)?;
            residual.iter_mut().zip(&preds).for_each(|(r, p)| *r -= p);
        }
        Ok(residual)
    }

    /// Fits one more stage on the current residuals without modifying the
    /// model. `label` selects an existing subsample group to reuse; `None`
    /// draws fresh subsamples.
    pub fn fit_next_stage(&self, data: &Dataset, label: Option<usize>) -> Result<ForestStage> {
        let next = self.stages.len();
        let residual = self.residuals(data, next)?;
        let config = self.config.stage_forest(self.config.steps());
        let (sample_seed, tree_seed) = forest::stage_seeds(config.seed, next);
        let inclusion = match label {
            Some(l) => {
                let stage = self
                    .config
                    .pattern
                    .labels()
                    .iter()
                    .position(|&x| x == l)
                    .ok_or_else(|| Error::config(format!("no stage carries label {l}")))?;
                self.stages[stage].inclusion().clone()
            }
            None => forest::draw_samples(data.n(), &config, sample_seed)?,
        };
        forest::fit_on_samples(&data.with_response(residual)?, &config, inclusion, tree_seed)
    }
}

/// Stage predictions at its own training rows under `mode`.
fn stage_fit_values(stage: &ForestStage, data: &Dataset, mode: ResidualMode) -> Result<Vec<f64>> {
    match mode {
        ResidualMode::Oob => Ok(stage.predict_oob(data)?.values),
        ResidualMode::Inbag | ResidualMode::Bootstrap => Ok(stage.predict_rows(data)),
    }
}

/// Fits all `M + 1` stages.
pub fn fit_boosted(data: &Dataset, config: &BoostConfig) -> Result<BoostedForest> {
    fit_boosted_with_base(data, config, None)
}

/// Like [`fit_boosted`], but takes stage 0 from `base` instead of refitting it.
/// `base` must be what [`fit_boosted`] would produce for stage 0 of `config`
/// on `data`, e.g. stage 0 of another model fit with the same base settings.
pub fn fit_boosted_with_base(
    data: &Dataset,
    config: &BoostConfig,
    base: Option<&ForestStage>,
) -> Result<BoostedForest> {
    config.validate(data.n(), data.d())?;
    if let Some(b) = base {
        if b.config() != &config.stage_forest(0) || b.inclusion().n() != data.n() || b.d() != data.d() {
            return Err(Error::config("base stage does not match stage 0 of this config"));
        }
    }
    let n = data.n();
    let labels = config.pattern.labels();
    let mut shared: Vec<Option<Inclusion>> = vec![None; config.pattern.group_count()];
    let mut residual = data.response().to_vec();
    let mut stages = Vec::with_capacity(labels.len());

    for (j, &label) in labels.iter().enumerate() {
        let forest_config = config.stage_forest(j);
        let (sample_seed, tree_seed) = forest::stage_seeds(forest_config.seed, j);
        let stage_data = if j == 0 {
            data.clone()
        } else {
            data.with_response(residual.clone())?
        };
        let stage = match (j, base) {
            (0, Some(b)) => {
                shared[label] = Some(b.inclusion().clone());
                b.clone()
            }
            _ => {
                let inclusion = match &shared[label] {
                    Some(inc) => inc.clone(),
                    None => {
                        let inc = forest::draw_samples(n, &forest_config, sample_seed)?;
                        shared[label] = Some(inc.clone());
                        inc
                    }
                };
                forest::fit_on_samples(&stage_data, &forest_config, inclusion, tree_seed)?
            }
        };
        if j + 1 < labels.len() {
            let preds = stage_fit_values(&stage, &stage_data, config.residual_mode)?;
            residual.iter_mut().zip(&preds).for_each(|(r, p)| *r -= p);
        }
        stages.push(stage);
    }

    let residual_mse = (0..n)
        .map(|i| {
            let x = data.row(i);
            let fitted: f64 = stages.iter().map(|s| s.predict(x)).sum();
            (fitted - data.response()[i]).powi(2)
        })
        .sum::<f64>()
        / n as f64;

    Ok(BoostedForest {
        stages,
        config: config.clone(),
        training_n: n,
        residual_mse,
    })
}

/// Checked prediction: the sum of every stage's forest prediction.
pub fn predict_boosted(model: &BoostedForest, x: &[f64]) -> Result<f64> {
    if x.len() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            got: x.len(),
        });
    }
    Ok(model.predict(x))
}

/// Number of distinct sharing patterns for an `M`-step boosted forest:
/// `a_{M+1} = sum_k a_{M+1,k}` with `a_{n,k} = k a_{n-1,k} + a_{n-1,k-1}` and
/// `a_{k,k} = a_{n,1} = 1`. Saturates at `u128::MAX`.
pub fn count_variants(steps: usize) -> u128 {
    let stages = steps + 1;
    // row[k] holds a_{m,k} for the current m.
    let mut row = vec![0u128; stages + 1];
    row[1] = 1;
    for m in 2..=stages {
        for k in (2..=m).rev() {
            row[k] = if k == m {
                1
            } else {
                (k as u128).saturating_mul(row[k]).saturating_add(row[k - 1])
            };
        }
        row[1] = 1;
    }
    row.iter().fold(0u128, |acc, &v| acc.saturating_add(v))
}

/// Every canonical sharing pattern of length `M + 1`, in lexicographic order.
pub fn enumerate_patterns(steps: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, next_label: usize, len: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=next_label {
            prefix.push(l);
            extend(prefix, next_label.max(l + 1), len, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut vec![0], 1, steps + 1, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopTestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub degrees_of_freedom: usize,
    /// True when the extra stage's predictions differ significantly from zero.
    pub continue_boosting: bool,
}

/// Quadratic form `v' S^-1 v`. An all-zero `v` gives zero regardless of `S`.
pub fn chi_square_statistic(values: &[f64], covariance: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let q = values.len();
    if covariance.nrows() != q || covariance.ncols() != q {
        return Err(Error::InvalidData(format!(
            "{q} values for a {}x{} covariance",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let scale = covariance.diagonal().amax();
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("covariance is not positive definite".into()))?;
    let pivot_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if scale.is_nan() || scale <= 0.0 || pivot_min * pivot_min <= 1e-12 * scale {
        return Err(Error::Singular(format!(
            "covariance over {q} test points is numerically rank deficient"
        )));
    }
    let v = nalgebra::DVector::from_column_slice(values);
    let solved = chol.solve(&v);
    Ok(v.dot(&solved))
}

/// Chi-square test of whether `extra_stage` (fit on the model's current
/// residuals) still predicts something other than zero at `test_points`.
pub fn stop_test(
    model: &BoostedForest,
    extra_stage: &ForestStage,
    test_points: &[Vec<f64>],
    level: f64,
) -> Result<StopTestOutcome> {
    if test_points.is_empty() {
        return Err(Error::config("the stopping test needs at least one test point"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!("level must be in (0, 1), got {level}")));
    }
    if extra_stage.d() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            got: extra_stage.d(),
        });
    }
    let sigma = variance::ij_covariance_matrix(extra_stage, test_points)?;
    let values: Vec<f64> = test_points.iter().map(|x| extra_stage.predict(x)).collect();
    let statistic = chi_square_statistic(&values, &sigma)?;
    let q = test_points.len();
    let threshold = ChiSquared::new(q as f64)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .inverse_cdf(1.0 - level);
    Ok(StopTestOutcome {
        statistic,
        threshold,
        degrees_of_freedom: q,
        continue_boosting: statistic > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{TreeConfig, TreeModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_data(n: usize, d: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| r[0] + noise * (rng.gen::<f64>() - 0.5))
            .collect();
        Dataset::from_rows(rows, y).unwrap()
    }

    fn small_forest(trees: usize, k: usize) -> ForestConfig {
        ForestConfig {
            seed: 5,
            ..ForestConfig::new(trees, k)
        }
    }

    #[test]
    fn pattern_validation() {
        assert!(SharingPattern::new(vec![0, 1, 0, 2]).is_ok());
        assert!(SharingPattern::new(vec![1]).is_err());
        assert!(SharingPattern::new(vec![0, 2]).is_err());
        assert!(SharingPattern::new(vec![]).is_err());
        assert_eq!(SharingPattern::parse("0, 1,1").unwrap().labels(), &[0, 1, 1]);
        assert!(SharingPattern::parse("0,x").is_err());
        assert_eq!(SharingPattern::same(2).labels(), &[0, 0, 0]);
        assert_eq!(SharingPattern::independent(2).labels(), &[0, 1, 2]);
        assert_eq!(
            SharingPattern::parse("0,1,0").unwrap().groups(),
            vec![vec![0, 2], vec![1]]
        );
    }

    #[test]
    fn variant_counts() {
        assert_eq!(count_variants(0), 1);
        assert_eq!(count_variants(1), 2);
        assert_eq!(count_variants(2), 5);
        assert_eq!(count_variants(3), 15);
        assert_eq!(count_variants(4), 52);
    }

    #[test]
    fn pattern_enumeration() {
        assert_eq!(enumerate_patterns(0), vec![vec![0]]);
        assert_eq!(enumerate_patterns(1), vec![vec![0, 0], vec![0, 1]]);
        assert_eq!(
            enumerate_patterns(2),
            vec![
                vec![0, 0, 0],
                vec![0, 0, 1],
                vec![0, 1, 0],
                vec![0, 1, 1],
                vec![0, 1, 2]
            ]
        );
        for m in 0..7 {
            let pats = enumerate_patterns(m);
            assert_eq!(pats.len() as u128, count_variants(m));
            assert!(pats.iter().all(|p| SharingPattern::new(p.clone()).is_ok()));
        }
    }

    #[test]
    fn zero_steps_is_a_random_forest() {
        let data = linear_data(60, 3, 0.2, 1);
        let forest = small_forest(40, 15);
        let model = fit_boosted(&data, &BoostConfig::random_forest(forest.clone())).unwrap();
        let rf = forest::fit_forest(&data, &forest).unwrap();
        for x in [[0.1, 0.2, 0.3], [-0.5, 0.0, 0.9]] {
            assert_eq!(predict_boosted(&model, &x).unwrap(), rf.predict(&x));
        }
    }

    #[test]
    fn variant_one_shares_inclusion() {
        let data = linear_data(60, 3, 0.2, 2);
        let config = BoostConfig::new(small_forest(30, 15), SharingPattern::same(1), ResidualMode::Oob);
        let model = fit_boosted(&data, &config).unwrap();
        assert_eq!(model.stages()[0].inclusion(), model.stages()[1].inclusion());
        assert_ne!(model.stages()[0].trees(), model.stages()[1].trees());
    }

    #[test]
    fn variants_share_stage_zero() {
        let data = linear_data(60, 3, 0.2, 3);
        let forest = small_forest(30, 15);
        let same = fit_boosted(
            &data,
            &BoostConfig::new(forest.clone(), SharingPattern::same(1), ResidualMode::Oob),
        )
        .unwrap();
        let ind = fit_boosted(
            &data,
            &BoostConfig::new(forest, SharingPattern::independent(1), ResidualMode::Oob),
        )
        .unwrap();
        assert_eq!(same.stages()[0], ind.stages()[0]);
        assert_ne!(same.stages()[1].inclusion(), ind.stages()[1].inclusion());
    }

    #[test]
    fn stages_train_on_replayed_residuals() {
        let data = linear_data(50, 2, 0.5, 4);
        for mode in [ResidualMode::Oob, ResidualMode::Inbag, ResidualMode::Bootstrap] {
            let config = BoostConfig::new(
                small_forest(12, 20),
                SharingPattern::parse("0,1,1").unwrap(),
                mode,
            );
            let model = fit_boosted(&data, &config).unwrap();
            for j in 1..3 {
                let residual = model.residuals(&data, j).unwrap();
                let stage_data = data.with_response(residual).unwrap();
                let (_, tree_seed) = forest::stage_seeds(config.forest.seed, j);
                let refit = forest::fit_on_samples(
                    &stage_data,
                    &config.stage_forest(j),
                    model.stages()[j].inclusion().clone(),
                    tree_seed,
                )
                .unwrap();
                assert_eq!(&refit, &model.stages()[j], "mode {mode:?} stage {j}");
            }
        }
    }

    #[test]
    fn bootstrap_mode_resamples_full_n() {
        let data = linear_data(30, 2, 0.5, 5);
        let config = BoostConfig::new(
            small_forest(10, 10),
            SharingPattern::independent(1),
            ResidualMode::Bootstrap,
        );
        let model = fit_boosted(&data, &config).unwrap();
        for stage in model.stages() {
            assert_eq!(stage.inclusion().column_sums(), vec![30; 10]);
        }
    }

    #[test]
    fn constant_response_boosts_to_constant() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 30.0, (i % 7) as f64]).collect();
        let data = Dataset::from_rows(rows, vec![4.25; 30]).unwrap();
        let config = BoostConfig::new(
            small_forest(20, 10),
            SharingPattern::independent(1),
            ResidualMode::Inbag,
        );
        let model = fit_boosted(&data, &config).unwrap();
        assert_eq!(model.stages()[1].predict(&[0.3, 2.0]), 0.0);
        assert!((model.predict(&[0.3, 2.0]) - 4.25).abs() < 1e-10);
    }

    #[test]
    fn boosting_helps_noiseless_linear_signal() {
        let data = linear_data(200, 2, 0.0, 6);
        let test = linear_data(200, 2, 0.0, 7);
        let forest = ForestConfig {
            tree: TreeConfig {
                mtry: Some(2),
                ..TreeConfig::default()
            },
            ..small_forest(300, 40)
        };
        let model = fit_boosted(
            &data,
            &BoostConfig::new(forest, SharingPattern::independent(1), ResidualMode::Oob),
        )
        .unwrap();
        let mse = |f: &dyn Fn(&[f64]) -> f64| {
            test.rows()
                .zip(test.response())
                .map(|(x, y)| (f(x) - y).powi(2))
                .sum::<f64>()
                / 200.0
        };
        let boosted = mse(&|x| model.predict(x));
        let base = mse(&|x| model.stages()[0].predict(x));
        assert!(boosted <= base, "boosted {boosted} vs base {base}");
    }

    #[test]
    fn shared_label_config_conflicts_are_rejected() {
        let data = linear_data(30, 2, 0.5, 8);
        let mut config =
            BoostConfig::new(small_forest(10, 10), SharingPattern::same(1), ResidualMode::Oob);
        config.stage_overrides.push(StageOverride {
            stage: 1,
            forest: small_forest(10, 12),
        });
        assert!(fit_boosted(&data, &config).is_err());
        // A tree-only override is fine.
        config.stage_overrides[0].forest = ForestConfig {
            tree: TreeConfig {
                min_leaf: 2,
                ..TreeConfig::default()
            },
            ..small_forest(10, 10)
        };
        assert!(fit_boosted(&data, &config).is_ok());
    }

    fn constant_stage(values: &[f64], samples: Vec<Vec<usize>>, n: usize) -> ForestStage {
        let trees = values.iter().map(|&v| TreeModel::constant(v, samples[0].len(), 1)).collect();
        let inc = Inclusion::from_samples(n, samples).unwrap();
        ForestStage::from_parts(trees, inc, ForestConfig::new(values.len(), 1)).unwrap()
    }

    fn dummy_model() -> BoostedForest {
        let stage = constant_stage(&[1.0, 1.0], vec![vec![0], vec![1]], 2);
        BoostedForest::from_parts(
            vec![stage],
            BoostConfig::random_forest(ForestConfig::new(2, 1)),
            2,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn stop_test_zero_stage() {
        let model = dummy_model();
        let extra = constant_stage(&[0.0, 0.0], vec![vec![0], vec![1]], 2);
        let out = stop_test(&model, &extra, &[vec![0.0], vec![1.0]], 0.05).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.continue_boosting);
    }

    #[test]
    fn stop_test_two_standard_errors() {
        let model = dummy_model();
        let extra = constant_stage(&[2.0, 0.0], vec![vec![0], vec![1]], 2);
        let sigma = variance::ij_covariance_matrix(&extra, &[vec![0.0]]).unwrap();
        // Row 0 is in tree 0 only and row 1 in tree 1 only: cov = +-1/2 each.
        assert!((sigma[(0, 0)] - 0.5).abs() < 1e-15);
        let out = stop_test(&model, &extra, &[vec![0.0]], 0.05).unwrap();
        // mean 1, variance 0.5 -> statistic 2.
        assert!((out.statistic - 2.0).abs() < 1e-12);
        assert!((out.threshold - 3.841_458_820_694_124).abs() < 1e-6);
        assert!(!out.continue_boosting);
    }

    #[test]
    fn stop_test_rejects_singular_covariance() {
        let model = dummy_model();
        let extra = constant_stage(&[2.0, 0.0], vec![vec![0], vec![1]], 2);
        let err = stop_test(&model, &extra, &[vec![0.0], vec![0.5]], 0.05).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn chi_square_statistic_matches_hand_value() {
        let sigma = nalgebra::DMatrix::from_row_slice(1, 1, &[0.25]);
        // prediction = 2 * sqrt(0.25) = 1 -> statistic 4.
        assert!((chi_square_statistic(&[1.0], &sigma).unwrap() - 4.0).abs() < 1e-12);
        let sigma2 = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        // Oracle via explicit inverse: det = 1.75.
        let (a, b) = (1.0, -2.0);
        let expected = (1.0 * a * a - 2.0 * 0.5 * a * b + 2.0 * b * b) / 1.75;
        assert!((chi_square_statistic(&[a, b], &sigma2).unwrap() - expected).abs() < 1e-12);
    }
}
