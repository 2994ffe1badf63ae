//! Shared fixtures for the benchmarks.

use boostwood_core::{Dataset, SimDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One draw of the linear simulation design with `n` rows.
pub fn linear_data(n: usize, seed: u64) -> Dataset {
    let design = SimDesign {
        n,
        ..SimDesign::linear()
    };
    design.generate(&mut ChaCha8Rng::seed_from_u64(seed))
}
