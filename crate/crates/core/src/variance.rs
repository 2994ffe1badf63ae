//! Infinitesimal-jackknife variance estimates.
//!
//! For one forest, `V_IJ = sum_i cov_b(N[i][b], T_b(x))^2` where `N[i][b]` is
//! the number of times row `i` appears in tree `b`'s sample. Boosted forests
//! group stages by their sharing label: stages in one group share an `N`
//! matrix, so their tree values are summed before taking covariances, and the
//! per-row covariances of different groups are added before squaring:
//!
//! ```text
//! v_ij  = sum_i ( sum_g cov_b(N_g[i][b], S_g,b(x)) )^2
//! zeta  = sum_g var_b(S_g,b(x))
//! total = v_ij + zeta / B
//! ```
//!
//! with `S_g,b = sum_{j in g} T^(j)_b`. The same-subsample variant has a single
//! group; the independent variant has one group per stage. All covariances and
//! variances use the `1/B` normalisation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::boost::BoostedForest;
use crate::error::{Error, Result};
use crate::forest::{ForestStage, Inclusion};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionWithVariance {
    pub estimate: f64,
    pub v_ij: f64,
    pub zeta_kk_hat: f64,
    pub total: f64,
    /// Tree count `B` used for the Monte Carlo term.
    pub trees: usize,
}

impl PredictionWithVariance {
    fn new(estimate: f64, v_ij: f64, zeta_kk_hat: f64, trees: usize) -> Self {
        PredictionWithVariance {
            estimate,
            v_ij,
            zeta_kk_hat,
            total: v_ij + zeta_kk_hat / trees as f64,
            trees,
        }
    }

    /// The Monte Carlo term `zeta_kk_hat / B`.
    pub fn monte_carlo(&self) -> f64 {
        self.zeta_kk_hat / self.trees as f64
    }
}

fn check_values(inclusion: &Inclusion, values: &[f64]) -> Result<()> {
    if values.len() != inclusion.trees() {
        return Err(Error::InvalidData(format!(
            "{} tree values for {} inclusion columns",
            values.len(),
            inclusion.trees()
        )));
    }
    if values.len() < 2 {
        return Err(Error::config("variance estimates need at least two trees"));
    }
    Ok(())
}

/// Population variance of `values`.
fn population_variance(values: &[f64]) -> f64 {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b
}

/// `sum_i cov_b(N[i][b], values[b])^2`.
pub fn ij_variance_single(inclusion: &Inclusion, values: &[f64]) -> Result<f64> {
    check_values(inclusion, values)?;
    Ok(inclusion.covariances(values).iter().map(|c| c * c).sum())
}

/// `sum_i cov_b(N0[i][b], values0[b]) * cov_b(N1[i][b], values1[b])`.
pub fn ij_covariance_pair(
    inclusion0: &Inclusion,
    inclusion1: &Inclusion,
    values0: &[f64],
    values1: &[f64],
) -> Result<f64> {
    check_values(inclusion0, values0)?;
    check_values(inclusion1, values1)?;
    if inclusion0.n() != inclusion1.n() || inclusion0.trees() != inclusion1.trees() {
        return Err(Error::InvalidData(format!(
            "inclusion shapes differ: {}x{} vs {}x{}",
            inclusion0.n(),
            inclusion0.trees(),
            inclusion1.n(),
            inclusion1.trees()
        )));
    }
    let c0 = inclusion0.covariances(values0);
    let c1 = inclusion1.covariances(values1);
    Ok(c0.iter().zip(&c1).map(|(a, b)| a * b).sum())
}

/// Grouped estimate for any sharing pattern.
pub fn variance_estimate(model: &BoostedForest, x: &[f64]) -> Result<PredictionWithVariance> {
    if x.len() != model.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            got: x.len(),
        });
    }
    let stages = model.stages();
    let trees = stages[0].n_trees();
    if stages.iter().any(|s| s.n_trees() != trees) {
        return Err(Error::config(
            "variance estimates need the same tree count in every stage",
        ));
    }
    if trees < 2 {
        return Err(Error::config("variance estimates need at least two trees"));
    }

    let stage_values: Vec<Vec<f64>> = stages.iter().map(|s| s.tree_values(x)).collect();
    let estimate = stage_values
        .iter()
        .map(|v| v.iter().sum::<f64>() / trees as f64)
        .sum();

    let mut row_cov = vec![0.0; model.training_n()];
    let mut zeta = 0.0;
    for group in model.pattern().groups() {
        let mut summed = stage_values[group[0]].clone();
        for &j in &group[1..] {
            summed.iter_mut().zip(&stage_values[j]).for_each(|(s, v)| *s += v);
        }
        let cov = stages[group[0]].inclusion().covariances(&summed);
        row_cov.iter_mut().zip(&cov).for_each(|(r, c)| *r += c);
        zeta += population_variance(&summed);
    }
    let v_ij = row_cov.iter().map(|c| c * c).sum();
    Ok(PredictionWithVariance::new(estimate, v_ij, zeta, trees))
}

/// Estimate for a model whose stages all share one set of subsamples.
pub fn variance_variant1(model: &BoostedForest, x: &[f64]) -> Result<PredictionWithVariance> {
    if model.pattern().group_count() != 1 {
        return Err(Error::config(format!(
            "same-subsample estimate needs a single-group pattern, got {}",
            model.pattern()
        )));
    }
    variance_estimate(model, x)
}

/// Estimate for a model with more than one subsample group. Plain random
/// forests (one stage) are accepted as well.
pub fn variance_variant2(model: &BoostedForest, x: &[f64]) -> Result<PredictionWithVariance> {
    let pattern = model.pattern();
    if pattern.steps() > 0 && pattern.group_count() == 1 {
        return Err(Error::config(format!(
            "independent-subsample estimate needs fresh subsamples, got {pattern}"
        )));
    }
    variance_estimate(model, x)
}

/// `q x q` matrix `C' C` with `C[i][s] = cov_b(N[i][b], T_b(x_s))`.
pub fn ij_covariance_matrix(stage: &ForestStage, test_points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if test_points.is_empty() {
        return Err(Error::config("covariance matrix needs at least one test point"));
    }
    if stage.n_trees() < 2 {
        return Err(Error::config("variance estimates need at least two trees"));
    }
    if let Some(bad) = test_points.iter().find(|x| x.len() != stage.d()) {
        return Err(Error::DimensionMismatch {
            expected: stage.d(),
            got: bad.len(),
        });
    }
    let n = stage.inclusion().n();
    let q = test_points.len();
    let mut c = DMatrix::zeros(n, q);
    for (s, x) in test_points.iter().enumerate() {
        let cov = stage.inclusion().covariances(&stage.tree_values(x));
        c.column_mut(s).copy_from_slice(&cov);
    }
    Ok(c.tr_mul(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boost::{fit_boosted, BoostConfig, ResidualMode, SharingPattern};
    use crate::data::Dataset;
    use crate::forest::ForestConfig;
    use crate::tree::TreeModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation from a dense count matrix, without the sparse shortcut.
    fn naive_cov(counts: &[Vec<u32>], values: &[f64]) -> Vec<f64> {
        let b = values.len() as f64;
        let vbar = values.iter().sum::<f64>() / b;
        counts
            .iter()
            .map(|row| {
                let nbar = row.iter().map(|&c| c as f64).sum::<f64>() / b;
                row.iter()
                    .zip(values)
                    .map(|(&c, v)| (c as f64 - nbar) * (v - vbar))
                    .sum::<f64>()
                    / b
            })
            .collect()
    }

    fn random_inclusion(rng: &mut ChaCha8Rng, n: usize, b: usize, k: usize) -> Inclusion {
        let samples = (0..b)
            .map(|_| rand::seq::index::sample(rng, n, k).into_vec())
            .collect();
        Inclusion::from_samples(n, samples).unwrap()
    }

    #[test]
    fn constant_values_give_zero() {
        let inc = Inclusion::from_counts(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        assert_eq!(ij_variance_single(&inc, &[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(
            ij_covariance_pair(&inc, &inc, &[1.0, 2.0, 5.0], &[3.0; 3]).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_tree_hand_value() {
        let inc = Inclusion::from_counts(&[vec![1, 0]]).unwrap();
        for (a, b) in [(3.0, 1.0), (-2.0, 5.5), (0.25, 0.0)] {
            let expected = ((a - b) / 4.0f64).powi(2);
            let got = ij_variance_single(&inc, &[a, b]).unwrap();
            assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        }
    }

    #[test]
    fn single_tree_is_rejected() {
        let inc = Inclusion::from_counts(&[vec![1]]).unwrap();
        assert!(ij_variance_single(&inc, &[1.0]).is_err());
        let inc2 = Inclusion::from_counts(&[vec![1, 0]]).unwrap();
        assert!(ij_variance_single(&inc2, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pair_matches_term_by_term_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let inc0 = random_inclusion(&mut rng, 5, 6, 2);
            let inc1 = random_inclusion(&mut rng, 5, 6, 3);
            let v0: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v1: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c0 = naive_cov(&inc0.to_dense(), &v0);
            let c1 = naive_cov(&inc1.to_dense(), &v1);
            let expected: f64 = c0.iter().zip(&c1).map(|(a, b)| a * b).sum();
            let got = ij_covariance_pair(&inc0, &inc1, &v0, &v1).unwrap();
            assert!((got - expected).abs() < 1e-12);
            let single = ij_variance_single(&inc0, &v0).unwrap();
            assert!((ij_covariance_pair(&inc0, &inc0, &v0, &v0).unwrap() - single).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_shape_mismatch() {
        let a = Inclusion::from_counts(&[vec![1, 0], vec![0, 1]]).unwrap();
        let b = Inclusion::from_counts(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        assert!(ij_covariance_pair(&a, &b, &[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    /// Stage whose tree `b` is a constant `values[b]`.
    fn constant_stage(inc: Inclusion, values: &[f64]) -> ForestStage {
        let trees = values.iter().map(|&v| TreeModel::constant(v, 1, 1)).collect();
        ForestStage::from_parts(trees, inc, ForestConfig::new(values.len(), 1)).unwrap()
    }

    fn model_of(stages: Vec<ForestStage>, pattern: &str) -> BoostedForest {
        let n = stages[0].inclusion().n();
        let config = BoostConfig::new(
            ForestConfig::new(stages[0].n_trees(), 1),
            SharingPattern::parse(pattern).unwrap(),
            ResidualMode::Oob,
        );
        BoostedForest::from_parts(stages, config, n, 0.0).unwrap()
    }

    #[test]
    fn mixed_pattern_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inc_a = random_inclusion(&mut rng, 5, 6, 2);
        let inc_b = random_inclusion(&mut rng, 5, 6, 2);
        let t: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let model = model_of(
            vec![
                constant_stage(inc_a.clone(), &t[0]),
                constant_stage(inc_b.clone(), &t[1]),
                constant_stage(inc_b.clone(), &t[2]),
            ],
            "0,1,1",
        );
        let got = variance_variant2(&model, &[0.0]).unwrap();

        let dense_a = inc_a.to_dense();
        let dense_b = inc_b.to_dense();
        let s12: Vec<f64> = t[1].iter().zip(&t[2]).map(|(a, b)| a + b).collect();
        let ca = naive_cov(&dense_a, &t[0]);
        let cb = naive_cov(&dense_b, &s12);
        let v_ij: f64 = ca.iter().zip(&cb).map(|(a, b)| (a + b).powi(2)).sum();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / 6.0;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 6.0
        };
        let zeta = var(&t[0]) + var(&s12);
        assert!((got.v_ij - v_ij).abs() < 1e-12);
        assert!((got.zeta_kk_hat - zeta).abs() < 1e-12);
        assert_eq!(got.total, got.v_ij + got.zeta_kk_hat / 6.0);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / 6.0;
        assert!((got.estimate - (mean(&t[0]) + mean(&t[1]) + mean(&t[2]))).abs() < 1e-12);
    }

    #[test]
    fn variant_one_uses_summed_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inc = random_inclusion(&mut rng, 5, 6, 3);
        let t0: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
        let t1: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
        let model = model_of(
            vec![constant_stage(inc.clone(), &t0), constant_stage(inc.clone(), &t1)],
            "0,0",
        );
        let sum: Vec<f64> = t0.iter().zip(&t1).map(|(a, b)| a + b).collect();
        let got = variance_variant1(&model, &[1.0]).unwrap();
        let expected: f64 = naive_cov(&inc.to_dense(), &sum).iter().map(|c| c * c).sum();
        assert!((got.v_ij - expected).abs() < 1e-12);
        assert!(variance_variant2(&model, &[1.0]).is_err());
    }

    #[test]
    fn independent_variant_rejects_shared_pattern_and_vice_versa() {
        let inc = Inclusion::from_counts(&[vec![1, 0], vec![0, 1]]).unwrap();
        let model = model_of(
            vec![
                constant_stage(inc.clone(), &[1.0, 2.0]),
                constant_stage(inc.clone(), &[0.5, 0.0]),
            ],
            "0,1",
        );
        assert!(variance_variant1(&model, &[0.0]).is_err());
        assert!(variance_variant2(&model, &[0.0]).is_ok());
        assert!(variance_variant2(&model, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn zero_second_stage_reduces_to_single_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inc0 = random_inclusion(&mut rng, 6, 8, 3);
        let inc1 = random_inclusion(&mut rng, 6, 8, 3);
        let t0: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let model = model_of(
            vec![constant_stage(inc0.clone(), &t0), constant_stage(inc1, &[0.0; 8])],
            "0,1",
        );
        let got = variance_variant2(&model, &[0.0]).unwrap();
        assert!((got.v_ij - ij_variance_single(&inc0, &t0).unwrap()).abs() < 1e-15);
        assert!((got.zeta_kk_hat - population_variance(&t0)).abs() < 1e-15);
    }

    #[test]
    fn constant_stage_sums_give_zero_total() {
        let inc = Inclusion::from_counts(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        let model = model_of(
            vec![
                constant_stage(inc.clone(), &[1.0, 2.0, 3.0]),
                constant_stage(inc, &[3.0, 2.0, 1.0]),
            ],
            "0,0",
        );
        let got = variance_variant1(&model, &[0.0]).unwrap();
        assert_eq!(got.total, 0.0);
        assert_eq!(got.estimate, 4.0);
    }

    fn fitted(pattern: &str, trees: usize) -> (BoostedForest, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = rows.iter().map(|r| r[0] + r[1] + 0.3 * rng.gen::<f64>()).collect();
        let data = Dataset::from_rows(rows, y).unwrap();
        let forest = ForestConfig {
            seed: 1,
            ..ForestConfig::new(trees, 20)
        };
        let config = BoostConfig::new(forest, SharingPattern::parse(pattern).unwrap(), ResidualMode::Oob);
        (fit_boosted(&data, &config).unwrap(), data)
    }

    #[test]
    fn monte_carlo_term_shrinks_with_more_trees() {
        let x = [0.2, -0.1, 0.4];
        let small = variance_variant2(&fitted("0,1", 500).0, &x).unwrap();
        let large = variance_variant2(&fitted("0,1", 5000).0, &x).unwrap();
        assert!(large.monte_carlo() < small.monte_carlo());
        assert!(large.total - large.v_ij < small.total - small.v_ij);
    }

    #[test]
    fn covariance_matrix_reductions() {
        let (model, _) = fitted("0", 200);
        let stage = &model.stages()[0];
        let x = vec![0.3, 0.1, -0.2];
        let m1 = ij_covariance_matrix(stage, std::slice::from_ref(&x)).unwrap();
        let single = ij_variance_single(stage.inclusion(), &stage.tree_values(&x)).unwrap();
        assert!((m1[(0, 0)] - single).abs() < 1e-15);

        let m2 = ij_covariance_matrix(stage, &[x.clone(), x.clone()]).unwrap();
        assert_eq!(m2[(0, 0)], m2[(0, 1)]);
        assert_eq!(m2[(1, 0)], m2[(1, 1)]);
        assert!(m2.determinant().abs() <= 1e-12 * m2[(0, 0)].powi(2));

        let pts = vec![x, vec![-0.5, 0.5, 0.0], vec![0.9, -0.9, 0.1]];
        let m3 = ij_covariance_matrix(stage, &pts).unwrap();
        assert_eq!(m3, m3.transpose());
        let eig = m3.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10));

        assert!(ij_covariance_matrix(stage, &[]).is_err());
        assert!(ij_covariance_matrix(stage, &[vec![0.0]]).is_err());
    }
}
