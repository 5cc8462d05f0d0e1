//! Subcubic verifiers.
//!
//! Inputs are grouped by `(t_max, t_query, c)` with `c` the number of positions
//! (query included) not holding `t_max`. A gap table assigns each group a gap `g`;
//! the group is certified for every input whose non-max tokens are all at most
//! `t_max − g`, using one bound that treats those tokens as interchangeable. The
//! attention and skip-path inputs to that bound come from low-rank or exact
//! summaries of the model selected by a [`SubcubicConfig`].

use super::{binomial, max_of, Certificate, Combine, Strategy, SubcubicConfig};
use crate::error::Result;
use crate::metrics::unexplained_dimensionality;
use crate::model::{ModelParams, PathMatrices};
use crate::par::Exec;
use crate::tensor::{FlopTrace, Matrix};
use crate::tricks::{attention_bound, eu_bound, QkFactors};
use std::time::Instant;

/// One input group with its gap and the shared pessimisation gap `g_star ≤ g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapCase {
    pub t_max: usize,
    pub t_query: usize,
    pub c: usize,
    pub g: usize,
    pub g_star: usize,
}

impl GapCase {
    /// Number of non-max tokens outside the query position.
    pub fn free_non_max(&self) -> usize {
        if self.t_query == self.t_max {
            self.c
        } else {
            self.c - 1
        }
    }
}

/// How the gap table is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMode {
    /// Smallest gap passing the relaxed check (the default).
    RelaxedSearch,
    /// Smallest gap for which every compatible input is correct, by enumeration.
    Exhaustive,
}

/// Gaps indexed by `(t_max, t_query, c)` plus the per-`(t_max, c)` minimum over queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapTable {
    v: usize,
    n: usize,
    gaps: Vec<usize>,
    g_star: Vec<usize>,
}

impl GapTable {
    fn new(v: usize, n: usize) -> Self {
        Self {
            v,
            n,
            gaps: vec![1; v * v * n],
            g_star: vec![1; v * n],
        }
    }

    fn idx(&self, t_max: usize, tq: usize, c: usize) -> usize {
        (t_max * self.v + tq) * self.n + c
    }

    /// Gap clipped to `[1, t_max]` (zero when `t_max = 0`).
    pub fn gap(&self, t_max: usize, tq: usize, c: usize) -> usize {
        self.gaps[self.idx(t_max, tq, c)].clamp(1, t_max.max(1)).min(t_max)
    }

    pub fn g_star(&self, t_max: usize, c: usize) -> usize {
        self.g_star[t_max * self.n + c].clamp(1, t_max.max(1)).min(t_max)
    }

    fn set(&mut self, t_max: usize, tq: usize, c: usize, g: usize) {
        let i = self.idx(t_max, tq, c);
        self.gaps[i] = g;
    }

    fn refresh_g_star(&mut self) {
        for t_max in 0..self.v {
            for c in 1..self.n {
                let m = (0..=t_max)
                    .filter(|&tq| c_range(t_max, tq, self.n).contains(&c))
                    .map(|tq| self.gaps[self.idx(t_max, tq, c)])
                    .min()
                    .unwrap_or(t_max.max(1));
                self.g_star[t_max * self.n + c] = m;
            }
        }
    }
}

/// Values of `c` for a `(t_max, t_query)` group.
fn c_range(t_max: usize, tq: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    if t_max == 0 {
        0..=0
    } else if tq == t_max {
        0..=n - 1
    } else {
        1..=n - 1
    }
}

/// Model summaries needed by one subcubic configuration.
#[derive(Debug, Clone)]
pub struct SubcubicContext {
    config: SubcubicConfig,
    v: usize,
    n: usize,
    sorted_b: Vec<Vec<f64>>,
    b_last: Vec<f64>,
    /// Low-rank attention scores with running minima and maxima along each row.
    low: Matrix,
    prefix_min: Matrix,
    prefix_max: Matrix,
    err_range: Vec<f64>,
    /// Bound on the skip-path logit spread per query token.
    skip: Vec<f64>,
    /// Exact `c = 0` value per `t_max`.
    all_max: Vec<f64>,
    /// `max_{t*≠t_max} max_i PVOU[i,t*] − PVOU[i,t_max]`.
    pos_maxmax: Vec<f64>,
    /// `max_{t*≠t_max} EVOU[t_max,t*] − EVOU[t_max,t_max]`.
    self_gain: Vec<f64>,
    /// Per-output-logit maxima used when the query-averaged skip logits are folded in:
    /// without and with the `t_max` copying term.
    folded_rest: Vec<f64>,
    folded_self: Vec<f64>,
    /// `[t_max·v + u] = max_{t≤u} max_{t*≠t_max} EVOU[t,t*] − EVOU[t,t_max]`.
    other_gain: Vec<f64>,
}

impl SubcubicContext {
    pub fn new(params: &ModelParams, config: SubcubicConfig, trace: &mut FlopTrace) -> Result<Self> {
        params.validate()?;
        let (v, n, d) = (params.d_vocab, params.n_ctx, params.d_model);
        let f = QkFactors::from_params(params, trace)?;
        let p_avg = params.p.col_means(trace);
        let p_hat = Matrix::from_fn(n, d, |i, j| params.p[(i, j)] - p_avg[j]);
        trace.add((n * d) as u64);

        let eqkp = f.query_side(trace)?.matmul_t(&p_hat, trace)?;
        let mut sorted_b = Vec::with_capacity(v);
        let mut b_last = Vec::with_capacity(v);
        for tq in 0..v {
            let mut b = eqkp.row(tq)[..n - 1].to_vec();
            b.sort_by(f64::total_cmp);
            sorted_b.push(b);
            b_last.push(eqkp[(tq, n - 1)]);
        }
        trace.add((v * n * n) as u64);

        let vou = params.v.matmul(&params.o, trace)?.matmul(&params.u, trace)?;
        let evou = f.e_k.matmul(&vou, trace)?;
        let pvou = p_hat.matmul(&vou, trace)?;

        let attn = attention_bound(&f, config.attn, trace)?;
        let mut prefix_min = attn.low.clone();
        let mut prefix_max = attn.low.clone();
        for tq in 0..v {
            for t in 1..v {
                prefix_min[(tq, t)] = prefix_min[(tq, t)].min(prefix_min[(tq, t - 1)]);
                prefix_max[(tq, t)] = prefix_max[(tq, t)].max(prefix_max[(tq, t - 1)]);
            }
        }
        trace.add((2 * v * v) as u64);

        let centered = config.combine == Combine::MeanQueryDiff;
        let eu = eu_bound(&f.e_q, &params.u, config.eu, centered, trace)?;
        let zero_mean = vec![0.0; v];
        let mean = eu.mean_row.as_deref().unwrap_or(&zero_mean);

        let mut pos_maxmax = vec![0.0; v];
        let mut self_gain = vec![0.0; v];
        let mut folded_rest = vec![0.0; v];
        let mut folded_self = vec![0.0; v];
        let mut all_max = vec![0.0; v];
        for t_max in 0..v {
            let pos: Vec<f64> = (0..v)
                .map(|s| max_of((0..n).map(|i| pvou[(i, s)] - pvou[(i, t_max)])))
                .collect();
            let row = evou.row(t_max);
            let others = || (0..v).filter(move |&s| s != t_max);
            let beta = |s: usize| row[s] - row[t_max];
            let alpha = |s: usize| mean[s] - mean[t_max] + pos[s];
            pos_maxmax[t_max] = max_of(others().map(|s| pos[s]));
            self_gain[t_max] = max_of(others().map(beta));
            folded_rest[t_max] = max_of(others().map(alpha));
            folded_self[t_max] = max_of(others().map(|s| alpha(s) + beta(s)));
            all_max[t_max] = match &eu.exact {
                Some(exact) => {
                    let e = exact.row(t_max);
                    max_of(others().map(|s| e[s] - e[t_max] + pos[s] + beta(s)))
                }
                None => eu.row_range[t_max] + folded_self[t_max],
            };
        }
        trace.add((2 * v * v * n + 12 * v * v) as u64);

        // Top two entries of every EVOU row give max_{t*≠t_max} EVOU[t,t*] in O(1).
        let top2: Vec<(usize, f64, f64)> = (0..v)
            .map(|t| {
                let row = evou.row(t);
                let best = (0..v)
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .unwrap();
                let second = max_of((0..v).filter(|&s| s != best).map(|s| row[s]));
                (best, row[best], second)
            })
            .collect();
        let mut other_gain = vec![f64::NEG_INFINITY; v * v];
        for t_max in 0..v {
            let mut running = f64::NEG_INFINITY;
            for t in 0..v {
                let (best, first, second) = top2[t];
                let top = if best == t_max { second } else { first };
                running = running.max(top - evou[(t, t_max)]);
                other_gain[t_max * v + t] = running;
            }
        }
        trace.add((4 * v * v) as u64);

        Ok(Self {
            config,
            v,
            n,
            sorted_b,
            b_last,
            low: attn.low,
            prefix_min,
            prefix_max,
            err_range: attn.err_range,
            skip: eu.row_range,
            all_max,
            pos_maxmax,
            self_gain,
            folded_rest,
            folded_self,
            other_gain,
        })
    }

    pub fn config(&self) -> SubcubicConfig {
        self.config
    }

    /// Attention on the `t_max` positions when they take the `max_slots` highest
    /// (or lowest) non-query positional scores, with logit advantage `adv` over
    /// every non-max token.
    fn max_attention(&self, tq: usize, query_is_max: bool, max_slots: usize, adv: f64, high: bool) -> f64 {
        let b = &self.sorted_b[tq];
        let slots = b.len();
        let is_max = |s: usize| if high { s >= slots - max_slots } else { s < max_slots };
        let q_logit = self.b_last[tq] + if query_is_max { adv } else { 0.0 };
        let m = (0..slots)
            .map(|s| b[s] + if is_max(s) { adv } else { 0.0 })
            .fold(q_logit, f64::max);
        let (mut on_max, mut total) = (0.0, 0.0);
        for (s, &bs) in b.iter().enumerate() {
            let w = (bs + if is_max(s) { adv } else { 0.0 } - m).exp();
            total += w;
            if is_max(s) {
                on_max += w;
            }
        }
        let wq = (q_logit - m).exp();
        total += wq;
        if query_is_max {
            on_max += wq;
        }
        on_max / total
    }

    /// Upper bound on `max_{t*≠t_max} ℓ_{t*} − ℓ_{t_max}` over every input in the
    /// case: query `t_query`, `c` positions not holding `t_max`, and every such
    /// token at most `t_max − g`. The non-max value contribution is bounded over
    /// tokens up to `t_max − g_star`.
    pub fn relaxed(&self, case: GapCase, trace: &mut FlopTrace) -> f64 {
        let GapCase {
            t_max,
            t_query: tq,
            c,
            g,
            g_star,
        } = case;
        if c == 0 {
            return self.all_max[t_max];
        }
        let v = self.v;
        let top = t_max - g;
        let top_star = t_max - g_star;
        let query_is_max = tq == t_max;
        let max_slots = self.n - 1 - case.free_non_max();

        let a_max = self.low[(tq, t_max)];
        let err = self.err_range[tq];
        let adv_hi = a_max - self.prefix_min[(tq, top)] + err;
        let adv_lo = a_max - self.prefix_max[(tq, top)] - err;
        let attn_hi = self.max_attention(tq, query_is_max, max_slots, adv_hi, true);
        let attn_lo = self.max_attention(tq, query_is_max, max_slots, adv_lo, false);
        let other = self.other_gain[t_max * v + top_star];

        let bound = |attn: f64| match self.config.combine {
            Combine::DropAverageQuery => {
                self.skip[tq] + self.pos_maxmax[t_max] + attn * self.self_gain[t_max] + (1.0 - attn) * other
            }
            Combine::MeanQueryDiff => {
                self.skip[tq] + (1.0 - attn) * (self.folded_rest[t_max] + other) + attn * self.folded_self[t_max]
            }
        };
        trace.add((2 * 6 * self.n + 24) as u64);
        bound(attn_hi).max(bound(attn_lo))
    }

    /// Fills the gap table. The relaxed search runs twice: first with `g_star = g`,
    /// then again with `g_star` fixed to the resulting per-`(t_max, c)` minimum so
    /// every entry is consistent with the value it will be checked against.
    pub fn gap_table(&self, mode: GapMode, params: Option<&ModelParams>, exec: Exec) -> Result<GapTable> {
        let (v, n) = (self.v, self.n);
        let mut table = GapTable::new(v, n);
        match mode {
            GapMode::RelaxedSearch => {
                let first = self.search(&table, exec, false);
                apply(&mut table, first);
                table.refresh_g_star();
                let second = self.search(&table, exec, true);
                apply(&mut table, second);
                table.refresh_g_star();
            }
            GapMode::Exhaustive => {
                let params = params.ok_or_else(|| {
                    crate::error::Error::InvalidConfig("exhaustive gap search needs model weights".into())
                })?;
                let rows = exec.try_map_collect(v, |t_max| -> Result<Vec<(usize, usize, usize, usize)>> {
                    let mut out = Vec::new();
                    for tq in 0..=t_max {
                        for c in c_range(t_max, tq, n) {
                            if c == 0 {
                                continue;
                            }
                            let mut found = t_max;
                            for g in 1..=t_max {
                                if exhaustive_gap_max(params, t_max, tq, c, g)? < 0.0 {
                                    found = g;
                                    break;
                                }
                            }
                            out.push((t_max, tq, c, found));
                        }
                    }
                    Ok(out)
                })?;
                apply(&mut table, rows);
                table.refresh_g_star();
            }
        }
        Ok(table)
    }

    fn search(&self, table: &GapTable, exec: Exec, fixed_star: bool) -> Vec<Vec<(usize, usize, usize, usize)>> {
        let n = self.n;
        exec.map_collect(self.v, |t_max| {
            let mut out = Vec::new();
            let mut scratch = FlopTrace::new();
            for tq in 0..=t_max {
                for c in c_range(t_max, tq, n) {
                    if c == 0 {
                        continue;
                    }
                    let g_hi = if tq == t_max { t_max } else { t_max - tq };
                    let g_lo = if fixed_star { table.g_star(t_max, c).max(1) } else { 1 };
                    let found = (g_lo..=g_hi)
                        .find(|&g| {
                            let g_star = if fixed_star { table.g_star(t_max, c) } else { g };
                            let case = GapCase {
                                t_max,
                                t_query: tq,
                                c,
                                g,
                                g_star,
                            };
                            self.relaxed(case, &mut scratch) < 0.0
                        })
                        .unwrap_or(t_max);
                    out.push((t_max, tq, c, found));
                }
            }
            out
        })
    }

    /// Certified number of inputs for a gap table, with the FLOPs of the check.
    pub fn count(&self, table: &GapTable, exec: Exec, trace: &mut FlopTrace) -> u64 {
        let n = self.n;
        let per_max = exec.map_collect(self.v, |t_max| {
            let mut t = FlopTrace::new();
            let mut count = 0u64;
            for tq in 0..=t_max {
                for c in c_range(t_max, tq, n) {
                    let g = table.gap(t_max, tq, c);
                    if tq != t_max && t_max - tq < g {
                        continue;
                    }
                    let case = GapCase {
                        t_max,
                        t_query: tq,
                        c,
                        g,
                        g_star: table.g_star(t_max, c).min(g),
                    };
                    t.add(4);
                    if self.relaxed(case, &mut t) < 0.0 {
                        let free = case.free_non_max();
                        let choices = if c == 0 { 1 } else { (t_max + 1 - g) as u64 };
                        count += binomial(n - 1, free) * choices.pow(free as u32);
                    }
                }
            }
            (count, t)
        });
        let mut total = 0;
        for (c, t) in per_max {
            total += c;
            trace.merge(t);
        }
        total
    }
}

fn apply(table: &mut GapTable, rows: Vec<Vec<(usize, usize, usize, usize)>>) {
    for (t_max, tq, c, g) in rows.into_iter().flatten() {
        table.set(t_max, tq, c, g);
    }
}

/// Certifies with one subcubic configuration. Gap-table search is not charged to
/// the certificate: the table is an untrusted hint that the count re-checks.
pub fn subcubic(params: &ModelParams, config: SubcubicConfig, exec: Exec) -> Result<Certificate> {
    let start = Instant::now();
    let mut trace = FlopTrace::new();
    let ctx = SubcubicContext::new(params, config, &mut trace)?;
    let table = ctx.gap_table(GapMode::RelaxedSearch, None, exec)?;
    let certified = ctx.count(&table, exec, &mut trace);
    let total = (params.d_vocab as u64).pow(params.n_ctx as u32);
    let strategy = Strategy::Subcubic(config);
    Ok(Certificate {
        strategy_id: strategy.id(),
        bound: certified as f64 / total as f64,
        certified,
        total,
        flops: trace.total(),
        unexplained_dims: unexplained_dimensionality(&strategy, params.d_vocab, params.d_model, params.n_ctx),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest `max_{t*≠t_max} ℓ_{t*} − ℓ_{t_max}` over every input compatible with the
/// case, by enumeration through the full forward pass. `-inf` when none exist.
pub fn exhaustive_gap_max(params: &ModelParams, t_max: usize, tq: usize, c: usize, g: usize) -> Result<f64> {
    let n = params.n_ctx;
    let mut worst = f64::NEG_INFINITY;
    if tq != t_max && (tq > t_max || t_max - tq < g) {
        return Ok(worst);
    }
    let free = if tq == t_max { c } else { c - 1 };
    let top = t_max as isize - g as isize;
    if free > 0 && top < 0 {
        return Ok(worst);
    }
    let choices = if free > 0 { (top + 1) as usize } else { 1 };
    let mut trace = FlopTrace::new();
    let mut seq = vec![0; n];
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize != free {
            continue;
        }
        let slots: Vec<usize> = (0..n - 1).filter(|i| mask >> i & 1 == 1).collect();
        for combo in 0..choices.pow(free as u32) {
            let mut rest = combo;
            seq[..n - 1].fill(t_max);
            for &s in &slots {
                seq[s] = rest % choices;
                rest /= choices;
            }
            seq[n - 1] = tq;
            let logits = params.forward(&seq, &mut trace)?;
            let gap = max_of(
                (0..params.d_vocab)
                    .filter(|&s| s != t_max)
                    .map(|s| logits[s] - logits[t_max]),
            );
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

/// Convenience for callers that already hold path matrices: exact `c = 0` gaps.
pub fn all_max_gap(paths: &PathMatrices, t_max: usize) -> f64 {
    let v = paths.d_vocab;
    let row = paths.evou.row(t_max);
    let eu = paths.eu.row(t_max);
    max_of((0..v).filter(|&s| s != t_max).map(|s| {
        eu[s] - eu[t_max] + row[s] - row[t_max]
            + max_of((0..paths.n_ctx).map(|i| paths.pvou[(i, s)] - paths.pvou[(i, t_max)]))
    }))
}
