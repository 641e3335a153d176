//! Benchmark fixtures.

use mogge_core::{default_scenario, sample_replicate, DataSet, FitOptions, Scenario};

/// The reference scenario resized to `n` observations.
pub fn scenario(n: usize) -> Scenario {
    Scenario { n, ..default_scenario() }
}

pub fn dataset(n: usize) -> DataSet {
    sample_replicate(&scenario(n), 0).expect("reference scenario samples").0
}

/// Single-start diagonal fit options, so timings measure one EM run.
pub fn single_start() -> FitOptions {
    FitOptions { n_starts: 1, ..FitOptions::diagonal() }
}
