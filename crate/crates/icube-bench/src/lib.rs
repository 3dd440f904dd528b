//! Fixtures shared by the benchmarks.

use icube_core::data::generate_unpaired;
use icube_core::models::Features;
use icube_core::{Dataset, EffectModel};
use std::sync::Arc;

pub fn bias_sparse(n: usize, seed: u64) -> Arc<Dataset> {
    Arc::new(generate_unpaired(n, EffectModel::BiasSparse { scale: 2.0 }, seed).expect("valid design").0)
}

pub fn linear_both(n: usize, seed: u64) -> Arc<Dataset> {
    Arc::new(generate_unpaired(n, EffectModel::LinearBoth { scale: 2.0 }, seed).expect("valid design").0)
}

/// Covariates as a feature matrix, with outcomes.
pub fn regression_problem(ds: &Dataset) -> (Features, Vec<f64>) {
    let mut f = Features::new(ds.d());
    for i in 0..ds.n() {
        f.push(ds.x(i));
    }
    (f, ds.outcomes().to_vec())
}

/// Deterministic p-values spread over (0, 1).
pub fn pvalues(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * 0.618_033_988_7).fract() * 0.999 + 0.0005).powi(2)).collect()
}
