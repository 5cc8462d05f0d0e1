//! Exhaustive verification: run the model on every input and count.

use super::Certificate;
use crate::certify::Strategy;
use crate::error::{Error, Result};
use crate::metrics::unexplained_dimensionality;
use crate::model::{predict, ModelParams};
use crate::par::Exec;
use crate::tensor::FlopTrace;
use std::time::Instant;

/// Default ceiling on the number of sequences enumerated.
pub const DEFAULT_MAX_SEQUENCES: u128 = 1 << 28;

#[derive(Debug, Clone, Copy)]
pub struct BruteOptions {
    pub exec: Exec,
    pub max_sequences: u128,
}

impl Default for BruteOptions {
    fn default() -> Self {
        Self {
            exec: Exec::Parallel,
            max_sequences: DEFAULT_MAX_SEQUENCES,
        }
    }
}

/// Which implementation evaluates each sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluator {
    /// Full forward pass from the weights.
    Forward,
    /// Recombination of precomputed path matrices.
    Paths,
}

/// FLOPs of one full forward pass at these dimensions.
pub fn forward_flops(params: &ModelParams) -> Result<u64> {
    let mut t = FlopTrace::new();
    params.forward(&vec![0; params.n_ctx], &mut t)?;
    Ok(t.total())
}

pub fn sequence_count(d_vocab: usize, n_ctx: usize) -> u128 {
    (d_vocab as u128).pow(n_ctx as u32)
}

/// Writes the sequence with lexicographic index `idx` into `seq`.
pub fn decode_sequence(mut idx: u64, d_vocab: usize, seq: &mut [usize]) {
    for slot in seq.iter_mut().rev() {
        *slot = (idx % d_vocab as u64) as usize;
        idx /= d_vocab as u64;
    }
}

/// Exact accuracy. FLOPs are reported as one forward pass times the number of inputs.
pub fn brute_force(params: &ModelParams, opts: BruteOptions) -> Result<Certificate> {
    let start = Instant::now();
    let total = sequence_count(params.d_vocab, params.n_ctx);
    let per_forward = forward_flops(params)?;
    if total > opts.max_sequences {
        return Err(Error::BudgetExceeded {
            sequences: total,
            estimated_flops: per_forward as f64 * total as f64,
            budget: opts.max_sequences,
        });
    }
    let correct = count_correct(params, Evaluator::Paths, opts.exec)?;
    let total = total as u64;
    Ok(Certificate {
        strategy_id: Strategy::Brute.id(),
        bound: correct as f64 / total as f64,
        certified: correct,
        total,
        flops: per_forward * total,
        unexplained_dims: unexplained_dimensionality(&Strategy::Brute, params.d_vocab, params.d_model, params.n_ctx),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Number of inputs whose prediction equals their maximum.
pub fn count_correct(params: &ModelParams, evaluator: Evaluator, exec: Exec) -> Result<u64> {
    let (v, n) = (params.d_vocab, params.n_ctx);
    let total = sequence_count(v, n) as u64;
    let prefix = n.min(2);
    let chunks = (v as u64).pow(prefix as u32);
    let per_chunk = total / chunks;
    let paths = params.decompose_paths(&mut FlopTrace::new())?;

    let counts = exec.try_map_collect(chunks as usize, |chunk| -> Result<u64> {
        let mut seq = vec![0; n];
        let mut attn = vec![0.0; n];
        let mut logits = vec![0.0; v];
        let mut scratch = FlopTrace::new();
        let mut correct = 0;
        for idx in chunk as u64 * per_chunk..(chunk as u64 + 1) * per_chunk {
            decode_sequence(idx, v, &mut seq);
            match evaluator {
                Evaluator::Paths => paths.logits_into(&seq, &mut attn, &mut logits),
                Evaluator::Forward => logits = params.forward(&seq, &mut scratch)?,
            }
            let max = *seq.iter().max().expect("n_ctx > 0");
            correct += (predict(&logits) == max) as u64;
        }
        Ok(correct)
    })?;
    Ok(counts.into_iter().sum())
}
