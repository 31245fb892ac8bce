//! Fixtures shared by the benchmarks in `benches/`.

use nms_core::{MetriplecticModel, ModelConfig};

/// A freshly initialized model with one hidden layer of width 10.
pub fn model(n: usize, r: usize) -> MetriplecticModel {
    MetriplecticModel::new(ModelConfig::uniform(n, r, &[10]), 0).expect("valid config")
}

/// A deterministic spread of states in `[-1, 1]^n`.
pub fn states(n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| (0..n).map(|i| ((k * n + i) as f64 * 0.618_034).sin()).collect())
        .collect()
}
