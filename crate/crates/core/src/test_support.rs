//! Deterministic fixtures shared by unit and integration tests.

use crate::model::ModelParams;
use crate::trainer::{init_params_with_std, train, TrainConfig};

/// Gaussian weights with the given standard deviation.
pub fn random_params(seed: u64, d_vocab: usize, d_model: usize, n_ctx: usize, std: f64) -> ModelParams {
    init_params_with_std(seed, d_vocab, d_model, n_ctx, std).expect("valid dims")
}

/// A briefly trained small model, good enough that certifiers have something to prove.
pub fn trained_small(seed: u64, d_vocab: usize, d_model: usize, n_ctx: usize, steps: usize) -> ModelParams {
    let cfg = TrainConfig {
        seed,
        d_vocab,
        d_model,
        n_ctx,
        steps,
        batch_size: 128,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    train(&cfg).expect("training a small model").params
}
