use boostwood_core::forest::draw_samples;
use boostwood_core::{
    count_variants, enumerate_patterns, fit_boosted, ij_covariance_matrix, load_csv, make_folds,
    variance_estimate, BoostConfig, Dataset, ForestConfig, ResidualMode, Resampling, SharingPattern,
    TargetColumn, TreeConfig,
};
use proptest::prelude::*;

fn dataset(n: usize, d: usize) -> impl Strategy<Value = Dataset> {
    (
        prop::collection::vec(-1e3f64..1e3, n * d),
        prop::collection::vec(-1e3f64..1e3, n),
    )
        .prop_map(move |(x, y)| Dataset::from_flat(x, d, y).unwrap())
}

fn sized_dataset() -> impl Strategy<Value = Dataset> {
    (10usize..30, 1usize..4).prop_flat_map(|(n, d)| dataset(n, d))
}

fn small_forest(trees: usize, k: usize, seed: u64) -> ForestConfig {
    ForestConfig {
        seed,
        tree: TreeConfig {
            min_leaf: 2,
            ..TreeConfig::default()
        },
        ..ForestConfig::new(trees, k)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_exact(data in sized_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data.write_csv(&path).unwrap();
        let back = load_csv(&path, &TargetColumn::Name("y".into()), true).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn inclusion_columns_sum_to_sample_size(
        n in 2usize..60,
        frac in 0.05f64..1.0,
        trees in 1usize..80,
        bootstrap in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let k = ((n as f64 * frac) as usize).max(1);
        let config = ForestConfig {
            resampling: if bootstrap { Resampling::Bootstrap } else { Resampling::Subsample },
            ..ForestConfig::new(trees, k)
        };
        let inc = draw_samples(n, &config, seed).unwrap();
        let expected = if bootstrap { n } else { k };
        prop_assert_eq!(inc.trees(), trees);
        prop_assert!(inc.column_sums().iter().all(|&s| s == expected));
        if !bootstrap {
            prop_assert!((0..trees).all(|b| inc.sample(b).windows(2).all(|w| w[0] < w[1])));
        }
    }

    #[test]
    fn total_is_ij_plus_monte_carlo(
        data in sized_dataset(),
        trees in 2usize..40,
        steps in 0usize..3,
        same in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let k = data.n() / 2;
        let pattern = if same { SharingPattern::same(steps) } else { SharingPattern::independent(steps) };
        let config = BoostConfig::new(small_forest(trees, k, seed), pattern, ResidualMode::Oob);
        let model = fit_boosted(&data, &config).unwrap();
        let pv = variance_estimate(&model, data.row(0)).unwrap();
        prop_assert_eq!(pv.total, pv.v_ij + pv.zeta_kk_hat / trees as f64);
        prop_assert!(pv.v_ij >= 0.0 && pv.zeta_kk_hat >= 0.0);
        prop_assert_eq!(pv.estimate, model.predict(data.row(0)));
    }

    #[test]
    fn covariance_matrix_is_psd(data in sized_dataset(), trees in 2usize..40, seed in any::<u64>()) {
        let config = BoostConfig::random_forest(small_forest(trees, data.n() / 2, seed));
        let model = fit_boosted(&data, &config).unwrap();
        let points: Vec<Vec<f64>> = (0..4).map(|i| data.row(i).to_vec()).collect();
        let m = ij_covariance_matrix(&model.stages()[0], &points).unwrap();
        let scale = m.trace().max(1e-300);
        prop_assert!((m.clone() - m.transpose()).amax() <= 1e-12 * scale);
        prop_assert!(m.symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10 * scale));
    }

    #[test]
    fn fitting_is_deterministic(data in sized_dataset(), seed in any::<u64>()) {
        let config = BoostConfig::new(
            small_forest(10, data.n() / 2, seed),
            SharingPattern::independent(1),
            ResidualMode::Inbag,
        );
        let a = fit_boosted(&data, &config).unwrap();
        let b = fit_boosted(&data, &config).unwrap();
        prop_assert_eq!(a.stages(), b.stages());
    }

    #[test]
    fn folds_are_balanced(n in 2usize..200, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 2 + ((n - 2) as f64 * k_frac) as usize;
        let plan = make_folds(n, k, seed).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn patterns_are_canonical_and_counted() {
    for m in 0..=7 {
        let patterns = enumerate_patterns(m);
        assert_eq!(patterns.len() as u128, count_variants(m));
        for p in &patterns {
            assert_eq!(p.len(), m + 1);
            assert!(SharingPattern::new(p.clone()).is_ok());
        }
        let mut sorted = patterns.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, patterns);
    }
}
