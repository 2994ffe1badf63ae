//! Boosted random forests for regression.
//!
//! A base random forest is fit on size-`k` subsamples; each boosting stage fits
//! another forest to the residuals left by the stages before it, and the final
//! prediction is the sum of all stages. Every prediction carries an
//! infinitesimal-jackknife variance estimate plus a Monte Carlo correction for
//! the finite number of trees, which is what makes confidence and prediction
//! intervals possible.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: datasets, CSV ingestion and k-fold plans
//! * [`tree`]: CART regression trees
//! * [`forest`]: one subsampled forest stage with its inclusion bookkeeping
//! * [`boost`]: multi-stage boosting, sharing patterns and the stopping test
//! * [`variance`]: the infinitesimal-jackknife variance engine
//! * [`eval`]: simulation study, cross-validation and interval metrics

pub mod boost;
pub mod data;
mod error;
pub mod eval;
pub mod forest;
pub mod rng;
pub mod tree;
pub mod variance;

pub use boost::{
    count_variants, enumerate_patterns, fit_boosted, stop_test, BoostConfig, BoostedForest,
    ResidualMode, SharingPattern, StopTestOutcome,
};
pub use data::{load_csv, make_folds, Dataset, FoldPlan, TargetColumn};
pub use error::{Error, Result};
pub use eval::{
    ks_normality, performance_improvement, prediction_interval, Interval, Method, SimDesign,
    SimReport, Signal,
};
pub use forest::{fit_forest, subset_count, ForestConfig, ForestStage, Inclusion, OobPredictions, Resampling};
pub use tree::{fit_tree, TreeConfig, TreeModel};
pub use variance::{
    ij_covariance_matrix, ij_covariance_pair, ij_variance_single, variance_estimate,
    variance_variant1, variance_variant2, PredictionWithVariance,
};
