//! A single forest stage: `B` trees on size-`k` subsamples drawn without
//! replacement (or full bootstrap resamples), plus the inclusion counts
//! `N[i][b]` that the variance engine needs.
//!
//! Exactly `B` subsamples are drawn, all distinct when `B <= C(n, k)`.
//! Subsample `b` comes from stream `b` of a ChaCha generator keyed by the
//! stage's sampling seed, and tree `b` from a seed derived from
//! `(tree seed, b)`, so fitting in parallel is bitwise reproducible.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{self, TreeConfig, TreeModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// `k` distinct rows per tree.
    #[default]
    Subsample,
    /// `n` rows drawn with replacement per tree.
    Bootstrap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Subsample size `k`; ignored for bootstrap resampling.
    pub subsample: usize,
    pub resampling: Resampling,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(trees: usize, subsample: usize) -> Self {
        ForestConfig {
            trees,
            subsample,
            resampling: Resampling::Subsample,
            tree: TreeConfig::default(),
            seed: 0,
        }
    }

    /// Rows per tree for a training set of `n` rows.
    pub fn sample_size(&self, n: usize) -> usize {
        match self.resampling {
            Resampling::Subsample => self.subsample,
            Resampling::Bootstrap => n,
        }
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::config("a forest needs at least one tree"));
        }
        if self.resampling == Resampling::Subsample && (self.subsample == 0 || self.subsample > n)
        {
            return Err(Error::config(format!(
                "subsample size k = {} must be in 1..={n}",
                self.subsample
            )));
        }
        self.tree.validate(d)
    }
}

/// Inclusion counts `N[i][b]` for `n` rows and `B` trees, stored sparsely as
/// each tree's sorted sample (repeats encode counts above one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    n: usize,
    samples: Vec<Vec<u32>>,
}

impl Inclusion {
    pub fn from_samples(n: usize, samples: Vec<Vec<usize>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("inclusion needs at least one tree"));
        }
        let samples = samples
            .into_iter()
            .map(|mut s| {
                if let Some(&bad) = s.iter().find(|&&i| i >= n) {
                    return Err(Error::InvalidData(format!("sample index {bad} >= n = {n}")));
                }
                s.sort_unstable();
                Ok(s.into_iter().map(|i| i as u32).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Inclusion { n, samples })
    }

    /// Builds inclusion from a dense `n x B` count matrix.
    pub fn from_counts(counts: &[Vec<u32>]) -> Result<Self> {
        let n = counts.len();
        let b = counts.first().map_or(0, Vec::len);
        if n == 0 || b == 0 || counts.iter().any(|r| r.len() != b) {
            return Err(Error::config("count matrix must be a non-empty rectangle"));
        }
        let samples = (0..b)
            .map(|t| {
                (0..n)
                    .flat_map(|i| std::iter::repeat_n(i, counts[i][t] as usize))
                    .collect()
            })
            .collect();
        Self::from_samples(n, samples)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn trees(&self) -> usize {
        self.samples.len()
    }

    pub fn sample(&self, b: usize) -> &[u32] {
        &self.samples[b]
    }

    pub fn count(&self, i: usize, b: usize) -> u32 {
        let s = &self.samples[b];
        let lo = s.partition_point(|&v| (v as usize) < i);
        let hi = s.partition_point(|&v| (v as usize) <= i);
        (hi - lo) as u32
    }

    pub fn column_sums(&self) -> Vec<usize> {
        self.samples.iter().map(Vec::len).collect()
    }

    /// Dense `n x B` matrix.
    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        let mut dense = vec![vec![0u32; self.trees()]; self.n];
        for (b, s) in self.samples.iter().enumerate() {
            for &i in s {
                dense[i as usize][b] += 1;
            }
        }
        dense
    }

    /// Row-major `n x B` in-bag flags.
    pub(crate) fn in_bag_mask(&self) -> Vec<bool> {
        let b_total = self.trees();
        let mut mask = vec![false; self.n * b_total];
        for (b, s) in self.samples.iter().enumerate() {
            for &i in s {
                mask[i as usize * b_total + b] = true;
            }
        }
        mask
    }

    /// Empirical covariances `cov_b(N[i][b], values[b])` for every row `i`,
    /// normalised by `1/B`.
    ///
    /// Uses `cov = (1/B) sum_b N[i][b] (T_b - mean(T))`, which needs only the
    /// sparse samples and avoids cancellation when the values have a large mean.
    pub fn covariances(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.trees(), "one value per tree");
        let b_total = self.trees() as f64;
        let mean = values.iter().sum::<f64>() / b_total;
        let mut acc = vec![0.0; self.n];
        for (s, &v) in self.samples.iter().zip(values) {
            let centred = v - mean;
            for &i in s {
                acc[i as usize] += centred;
            }
        }
        acc.iter_mut().for_each(|a| *a /= b_total);
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestStage {
    trees: Vec<TreeModel>,
    inclusion: Inclusion,
    config: ForestConfig,
}

/// Out-of-bag predictions on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct OobPredictions {
    pub values: Vec<f64>,
    /// Number of trees for which the row was out of bag.
    pub oob_trees: Vec<usize>,
    /// Rows that were in bag for every tree; their value is the full-forest prediction.
    pub fallback: Vec<bool>,
}

impl OobPredictions {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

impl ForestStage {
    pub fn from_parts(trees: Vec<TreeModel>, inclusion: Inclusion, config: ForestConfig) -> Result<Self> {
        if trees.is_empty() || trees.len() != inclusion.trees() {
            return Err(Error::InvalidData(format!(
                "{} trees for {} inclusion columns",
                trees.len(),
                inclusion.trees()
            )));
        }
        let d = trees[0].d();
        if trees.iter().any(|t| t.d() != d) {
            return Err(Error::InvalidData("trees disagree on feature count".into()));
        }
        Ok(ForestStage {
            trees,
            inclusion,
            config,
        })
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn inclusion(&self) -> &Inclusion {
        &self.inclusion
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.trees[0].d()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-tree predictions `T_b(x)`, in tree order.
    pub fn tree_values(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Mean of the tree predictions, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> f64 {
        mean(&self.tree_values(x))
    }

    /// Full-forest predictions at every row of `data`.
    pub fn predict_rows(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n())
            .into_par_iter()
            .map(|i| self.predict(data.row(i)))
            .collect()
    }

    /// Out-of-bag predictions for the stage's own training rows.
    pub fn predict_oob(&self, data: &Dataset) -> Result<OobPredictions> {
        if data.n() != self.inclusion.n() {
            return Err(Error::InvalidData(format!(
                "stage was trained on {} rows, got {}",
                self.inclusion.n(),
                data.n()
            )));
        }
        self.check_dim(data.row(0))?;
        let b_total = self.trees.len();
        let mask = self.inclusion.in_bag_mask();
        let per_row: Vec<(f64, usize)> = (0..data.n())
            .into_par_iter()
            .map(|i| {
                let x = data.row(i);
                let bag = &mask[i * b_total..(i + 1) * b_total];
                let mut sum = 0.0;
                let mut count = 0;
                for (tree, &in_bag) in self.trees.iter().zip(bag) {
                    if !in_bag {
                        sum += tree.predict(x);
                        count += 1;
                    }
                }
                if count == 0 {
                    (self.predict(x), 0)
                } else {
                    (sum / count as f64, count)
                }
            })
            .collect();
        Ok(OobPredictions {
            values: per_row.iter().map(|p| p.0).collect(),
            oob_trees: per_row.iter().map(|p| p.1).collect(),
            fallback: per_row.iter().map(|p| p.1 == 0).collect(),
        })
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Number of size-`k` subsets of `n` rows, saturating at `u128::MAX`.
pub fn subset_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = match c.checked_mul(n as u128 - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// Draws the `B` tree samples for a stage.
///
/// Subsamples are distinct sets whenever `B <= C(n, k)`: a repeated set is
/// replaced by a fresh draw from stream `B`, `B + 1`, ... in tree order.
pub fn draw_samples(n: usize, config: &ForestConfig, sample_seed: u64) -> Result<Inclusion> {
    let size = config.sample_size(n);
    let draw = |stream: u64| -> Vec<usize> {
        let mut rng = rng::stream(sample_seed, stream);
        match config.resampling {
            Resampling::Subsample => {
                let mut s = index::sample(&mut rng, n, size).into_vec();
                s.sort_unstable();
                s
            }
            Resampling::Bootstrap => (0..size).map(|_| rng.gen_range(0..n)).collect(),
        }
    };
    let mut samples: Vec<Vec<usize>> = (0..config.trees)
        .into_par_iter()
        .map(|b| draw(b as u64))
        .collect();
    if config.resampling == Resampling::Subsample
        && config.trees as u128 <= subset_count(n, size)
    {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut next = config.trees as u64;
        for sample in &mut samples {
            while !seen.insert(sample.clone()) {
                *sample = draw(next);
                next += 1;
            }
        }
    }
    Inclusion::from_samples(n, samples)
}

/// Fits one tree per inclusion column. Tree `b` is grown with a seed derived
/// from `(tree_seed, b)`.
pub fn fit_on_samples(
    data: &Dataset,
    config: &ForestConfig,
    inclusion: Inclusion,
    tree_seed: u64,
) -> Result<ForestStage> {
    config.validate(data.n(), data.d())?;
    if inclusion.n() != data.n() {
        return Err(Error::InvalidData(format!(
            "inclusion covers {} rows, data has {}",
            inclusion.n(),
            data.n()
        )));
    }
    if inclusion.column_sums().contains(&0) {
        return Err(Error::config("cannot fit a tree on an empty sample"));
    }
    let trees = (0..inclusion.trees())
        .into_par_iter()
        .map(|b| {
            let sample: Vec<usize> = inclusion.sample(b).iter().map(|&i| i as usize).collect();
            let tree_config = TreeConfig {
                seed: rng::derive(tree_seed, b as u64),
                ..config.tree.clone()
            };
            tree::grow(data, &sample, &tree_config)
        })
        .collect();
    Ok(ForestStage {
        trees,
        inclusion,
        config: config.clone(),
    })
}

/// Seeds used for stage `stage` of a model with base seed `seed`: one for the
/// subsamples and one for the trees.
pub(crate) fn stage_seeds(seed: u64, stage: usize) -> (u64, u64) {
    (
        rng::derive(seed, 2 * stage as u64),
        rng::derive(seed, 2 * stage as u64 + 1),
    )
}

/// Fits a random forest: exactly `B` samples, then one tree per sample.
pub fn fit_forest(data: &Dataset, config: &ForestConfig) -> Result<ForestStage> {
    config.validate(data.n(), data.d())?;
    let (sample_seed, tree_seed) = stage_seeds(config.seed, 0);
    let inclusion = draw_samples(data.n(), config, sample_seed)?;
    fit_on_samples(data, config, inclusion, tree_seed)
}

/// Checked forest prediction: the arithmetic mean of the `B` tree predictions.
pub fn predict_forest(stage: &ForestStage, x: &[f64]) -> Result<f64> {
    stage.check_dim(x)?;
    Ok(stage.predict(x))
}

/// Checked per-tree predictions.
pub fn tree_matrix(stage: &ForestStage, x: &[f64]) -> Result<Vec<f64>> {
    stage.check_dim(x)?;
    Ok(stage.tree_values(x))
}

pub fn predict_oob(stage: &ForestStage, data: &Dataset) -> Result<OobPredictions> {
    stage.predict_oob(data)
}
