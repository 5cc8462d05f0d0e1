//! Cubic-time verifier over pure sequences.
//!
//! Inputs are grouped by `(t_max, t_query, c)` where `c` counts the non-query
//! positions holding something other than `t_max`. For every non-max token `t'`
//! the verifier bounds the worst logit gap of the sequences that use `t'` for all
//! `c` of those positions, over every ordering. A sequence whose non-max tokens
//! are drawn from a set of individually passing tokens is then correct, since its
//! output is a convex mixture of the pure cases. This gives
//! `C(n−1, c) · |passing|^c` certified inputs per group.

use super::{binomial, max_of, Certificate, Strategy};
use crate::error::Result;
use crate::metrics::unexplained_dimensionality;
use crate::model::{ModelParams, PathMatrices};
use crate::par::Exec;
use crate::tensor::FlopTrace;
use std::time::Instant;

/// One pure case: `c` copies of `t_prime` in the non-query positions, the rest `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PureCase {
    pub t_max: usize,
    pub t_query: usize,
    pub t_prime: usize,
    pub c: usize,
}

/// Quantities shared by every case.
#[derive(Debug, Clone)]
pub struct CubicContext<'a> {
    paths: &'a PathMatrices,
    v: usize,
    n: usize,
    /// Ascending positional scores of the non-query positions, per query token.
    sorted_b: Vec<Vec<f64>>,
    /// `max_{t*≠t_max} EU[tq,t*] − EU[tq,t_max]`, indexed `[t_max·v + tq]`.
    skip_max: Vec<f64>,
    /// `max_i PVOU[i,t*] − PVOU[i,t_max]`, indexed `[t_max·v + t*]`.
    pos_max: Vec<f64>,
    /// `max_{t*≠t_max} pos_max[t_max,t*] + EVOU[t,t*] − EVOU[t,t_max]`, indexed `[t_max·v + t]`.
    folded: Vec<f64>,
}

impl<'a> CubicContext<'a> {
    pub fn new(paths: &'a PathMatrices, trace: &mut FlopTrace) -> Self {
        let (v, n) = (paths.d_vocab, paths.n_ctx);
        let sorted_b = (0..v)
            .map(|tq| {
                let mut b = paths.eqkp.row(tq)[..n - 1].to_vec();
                b.sort_by(f64::total_cmp);
                b
            })
            .collect();
        trace.add((v * n * n) as u64);

        let mut skip_max = vec![0.0; v * v];
        let mut pos_max = vec![0.0; v * v];
        for t_max in 0..v {
            for tq in 0..v {
                let eu = paths.eu.row(tq);
                skip_max[t_max * v + tq] = max_of((0..v).filter(|&s| s != t_max).map(|s| eu[s] - eu[t_max]));
            }
            for s in 0..v {
                pos_max[t_max * v + s] = max_of((0..n).map(|i| paths.pvou[(i, s)] - paths.pvou[(i, t_max)]));
            }
        }
        trace.add((2 * v * v * v + 2 * v * v * n) as u64);

        let mut folded = vec![0.0; v * v];
        for t_max in 0..v {
            let pm = &pos_max[t_max * v..(t_max + 1) * v];
            for t in 0..v {
                let row = paths.evou.row(t);
                folded[t_max * v + t] = max_of((0..v).filter(|&s| s != t_max).map(|s| pm[s] + row[s] - row[t_max]));
            }
        }
        trace.add((3 * v * v * v) as u64);

        Self {
            paths,
            v,
            n,
            sorted_b,
            skip_max,
            pos_max,
            folded,
        }
    }

    /// Upper bound on `max_{t*≠t_max} ℓ_{t*} − ℓ_{t_max}` over every ordering of the
    /// case. A negative value certifies all of them.
    pub fn relaxed(&self, case: PureCase, trace: &mut FlopTrace) -> f64 {
        let PureCase {
            t_max,
            t_query: tq,
            t_prime,
            c,
        } = case;
        let (v, n) = (self.v, self.n);
        let p = self.paths;
        let a = p.eqke.row(tq);
        let b_last = p.eqkp[(tq, n - 1)];
        let b = &self.sorted_b[tq];

        if c == 0 {
            // All non-query tokens are t_max: the attention pattern is fixed.
            let q_logit = a[tq] + b_last;
            let m = b.iter().map(|&bi| a[t_max] + bi).fold(q_logit, f64::max);
            let wq = (q_logit - m).exp();
            let wmax: f64 = b.iter().map(|&bi| (a[t_max] + bi - m).exp()).sum();
            let z = wq + wmax;
            let (wq, wmax) = (wq / z, wmax / z);
            let eu = p.eu.row(tq);
            let vq = p.evou.row(tq);
            let vm = p.evou.row(t_max);
            let pm = &self.pos_max[t_max * v..(t_max + 1) * v];
            trace.add((5 * n + 8 * v) as u64);
            return max_of(
                (0..v)
                    .filter(|&s| s != t_max)
                    .map(|s| eu[s] - eu[t_max] + pm[s] + (vq[s] - vq[t_max]) * wq + (vm[s] - vm[t_max]) * wmax),
            );
        }

        let fold = &self.folded[t_max * v..(t_max + 1) * v];
        let mut worst = f64::NEG_INFINITY;
        // t' occupies the c lowest-scoring slots, then the c highest.
        for prime_low in [true, false] {
            let mut num = 0.0;
            let mut den = 0.0;
            let slot_token = |slot: usize| {
                let is_prime = if prime_low { slot < c } else { slot >= n - 1 - c };
                if is_prime {
                    t_prime
                } else {
                    t_max
                }
            };
            let m = (0..n - 1)
                .map(|s| a[slot_token(s)] + b[s])
                .fold(a[tq] + b_last, f64::max);
            for (slot, &bs) in b.iter().enumerate() {
                let t = slot_token(slot);
                let w = (a[t] + bs - m).exp();
                num += w * fold[t];
                den += w;
            }
            let wq = (a[tq] + b_last - m).exp();
            num += wq * fold[tq];
            den += wq;
            worst = worst.max(num / den);
        }
        trace.add((2 * 7 * n + 2) as u64);
        self.skip_max[t_max * v + tq] + worst
    }
}

/// Certifies accuracy by counting inputs covered by passing pure cases.
pub fn cubic(params: &ModelParams, exec: Exec) -> Result<Certificate> {
    let start = Instant::now();
    let mut trace = FlopTrace::new();
    let paths = params.decompose_paths(&mut trace)?;
    let (certified, flops) = cubic_count(&paths, exec, &mut trace);
    let total = (params.d_vocab as u64).pow(params.n_ctx as u32);
    Ok(Certificate {
        strategy_id: Strategy::Cubic.id(),
        bound: certified as f64 / total as f64,
        certified,
        total,
        flops,
        unexplained_dims: unexplained_dimensionality(&Strategy::Cubic, params.d_vocab, params.d_model, params.n_ctx),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Certified count and total FLOPs (including whatever `trace` already holds).
pub fn cubic_count(paths: &PathMatrices, exec: Exec, trace: &mut FlopTrace) -> (u64, u64) {
    let (v, n) = (paths.d_vocab, paths.n_ctx);
    let ctx = CubicContext::new(paths, trace);
    let per_max = exec.map_collect(v, |t_max| {
        let mut t = FlopTrace::new();
        let mut count = 0u64;
        for tq in 0..=t_max {
            if tq != t_max && n < 2 {
                continue;
            }
            let c_max = if tq == t_max { n - 1 } else { n - 2 };
            for c in 0..=c_max {
                if c == 0 {
                    let case = PureCase {
                        t_max,
                        t_query: tq,
                        t_prime: t_max,
                        c,
                    };
                    count += (ctx.relaxed(case, &mut t) < 0.0) as u64;
                    continue;
                }
                let passing = (0..t_max)
                    .filter(|&t_prime| {
                        ctx.relaxed(
                            PureCase {
                                t_max,
                                t_query: tq,
                                t_prime,
                                c,
                            },
                            &mut t,
                        ) < 0.0
                    })
                    .count() as u64;
                count += binomial(n - 1, c) * passing.pow(c as u32);
            }
        }
        (count, t)
    });
    let mut certified = 0;
    for (count, t) in per_max {
        certified += count;
        trace.merge(t);
    }
    (certified, trace.total())
}

/// Largest `max_{t*≠t_max} ℓ_{t*} − ℓ_{t_max}` over every arrangement of the case,
/// by enumeration through the full forward pass. Test oracle for [`CubicContext::relaxed`].
pub fn exhaustive_case_max(params: &ModelParams, case: PureCase) -> Result<f64> {
    let n = params.n_ctx;
    let mut worst = f64::NEG_INFINITY;
    let mut trace = FlopTrace::new();
    // Choose which c of the n−1 non-query slots hold t'.
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize != case.c {
            continue;
        }
        let mut seq: Vec<usize> = (0..n - 1)
            .map(|i| if mask >> i & 1 == 1 { case.t_prime } else { case.t_max })
            .collect();
        seq.push(case.t_query);
        let logits = params.forward(&seq, &mut trace)?;
        let gap = max_of(
            (0..params.d_vocab)
                .filter(|&s| s != case.t_max)
                .map(|s| logits[s] - logits[case.t_max]),
        );
        worst = worst.max(gap);
    }
    Ok(worst)
}
