//! Cheap bounds on extrema of matrix products.
//!
//! Two families live here. The mean+diff bounds lower-bound `min f(x,y) + g(y,z)`
//! by splitting `f` into a summary and a residual. The row-difference bounds
//! upper-bound how much a row of a matrix product can vary, without forming the
//! product. Both feed the low-rank attention and skip-path bounds used by the
//! subcubic verifier.

use crate::certify::{AttnVariant, EuVariant};
use crate::error::{Error, Result};
use crate::tensor::{factored_top_svd, range, row_diff_range, svd, FlopTrace, Matrix};

/// `min_{y,z}[E_x f(x,y) + g(y,z)] + min_{x,y}[f(x,y) − E_x f(x,y)]`, a lower bound on
/// `min_{x,y,z} f(x,y) + g(y,z)` for `f: x×y` and `g: y×z`.
pub fn mean_diff_min_bound(f: &Matrix, g: &Matrix) -> Result<f64> {
    let h = f.col_means(&mut FlopTrace::new());
    summarize_diff_min_bound(f, g, &h)
}

/// As [`mean_diff_min_bound`] with an arbitrary summary `h(y)` in place of the mean.
pub fn summarize_diff_min_bound(f: &Matrix, g: &Matrix, h: &[f64]) -> Result<f64> {
    if f.cols() != g.rows() || h.len() != f.cols() {
        return Err(Error::ShapeMismatch {
            op: "summarize_diff_min_bound",
            left: f.shape(),
            right: g.shape(),
        });
    }
    if f.rows() == 0 || f.cols() == 0 || g.cols() == 0 {
        return Err(Error::EmptyInput("summarize_diff_min_bound"));
    }
    let summary = (0..g.rows())
        .flat_map(|y| g.row(y).iter().map(move |gz| h[y] + gz))
        .fold(f64::INFINITY, f64::min);
    let residual = (0..f.rows())
        .flat_map(|x| f.row(x).iter().zip(h).map(|(fx, hy)| fx - hy))
        .fold(f64::INFINITY, f64::min);
    Ok(summary + residual)
}

/// Upper bound on the row range of `A·B`: `max_r Σ_k |A_rk|·range(B_k)`.
pub fn max_row_diff_bound(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(max_or_zero(&row_diff_bounds(&[a, b], &[None], &mut FlopTrace::new())?))
}

/// Row range bound for a chain `A₀·A₁⋯Aₙ`, nesting absolute values down to the
/// row ranges of the last matrix.
pub fn recursive_max_row_diff_bound(chain: &[&Matrix]) -> Result<f64> {
    let none = vec![None; chain.len().saturating_sub(1)];
    Ok(max_or_zero(&row_diff_bounds(chain, &none, &mut FlopTrace::new())?))
}

/// Row range bound for a chain where each `A_p` (all but the last) may carry a
/// column summary `h_p`. The summarised part is propagated exactly, the residual
/// `|A_p − h_p|` through the recursion. Zero summaries give the plain recursion.
pub fn combined_mean_max_row_diff_bound(chain: &[&Matrix], summaries: &[Option<Vec<f64>>]) -> Result<f64> {
    Ok(max_or_zero(&row_diff_bounds(chain, summaries, &mut FlopTrace::new())?))
}

fn max_or_zero(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

/// Per-row bounds on `range((A₀⋯Aₙ)_r)` for every row `r` of `A₀`.
pub fn row_diff_bounds(chain: &[&Matrix], summaries: &[Option<Vec<f64>>], trace: &mut FlopTrace) -> Result<Vec<f64>> {
    let last = *chain.last().ok_or(Error::EmptyInput("row difference chain"))?;
    if summaries.len() + 1 != chain.len() {
        return Err(Error::InvalidShape(format!(
            "{} summaries for a chain of {}",
            summaries.len(),
            chain.len()
        )));
    }
    for w in chain.windows(2) {
        if w[0].cols() != w[1].rows() {
            return Err(Error::ShapeMismatch {
                op: "row_diff_bounds",
                left: w[0].shape(),
                right: w[1].shape(),
            });
        }
    }
    let mut rho = row_diff_range(last, trace);
    for p in (0..chain.len() - 1).rev() {
        let a = chain[p];
        let (offset, h) = match &summaries[p] {
            Some(h) => {
                if h.len() != a.cols() {
                    return Err(Error::InvalidShape(format!(
                        "summary of length {} for {} columns",
                        h.len(),
                        a.cols()
                    )));
                }
                let mut x = h.clone();
                for m in &chain[p + 1..] {
                    x = m.vec_mul(&x, trace)?;
                }
                (range(&x), h.clone())
            }
            None => (0.0, vec![0.0; a.cols()]),
        };
        rho = (0..a.rows())
            .map(|r| {
                offset
                    + a.row(r)
                        .iter()
                        .zip(&h)
                        .zip(&rho)
                        .map(|((x, hk), rk)| (x - hk).abs() * rk)
                        .sum::<f64>()
            })
            .collect();
        trace.add((3 * a.rows() * a.cols() + a.rows()) as u64);
    }
    Ok(rho)
}

/// Rank-one or dense factor of a product chain.
#[derive(Debug, Clone)]
enum Factor {
    RankOne { u: Vec<f64>, w: Vec<f64> },
    Dense(Matrix),
}

impl Factor {
    fn dense(&self) -> Matrix {
        match self {
            Factor::RankOne { u, w } => Matrix::outer(u, w),
            Factor::Dense(m) => m.clone(),
        }
    }

    fn transpose(&self) -> Factor {
        match self {
            Factor::RankOne { u, w } => Factor::RankOne {
                u: w.clone(),
                w: u.clone(),
            },
            Factor::Dense(m) => Factor::Dense(m.transpose()),
        }
    }
}

/// The attention factors, with `EQKE = e_q · q · kᵀ · e_kᵀ`. `q` carries the `1/√d` scale.
#[derive(Debug, Clone)]
pub struct QkFactors {
    pub e_q: Matrix,
    pub e_k: Matrix,
    pub q: Matrix,
    pub k: Matrix,
}

impl QkFactors {
    pub fn from_params(params: &crate::model::ModelParams, trace: &mut FlopTrace) -> Result<Self> {
        let n = params.n_ctx;
        let p_avg = params.p.col_means(trace);
        Ok(Self {
            e_q: params.e.add_row_broadcast(params.p.row(n - 1), trace)?,
            e_k: params.e.add_row_broadcast(&p_avg, trace)?,
            q: params.q.scale(1.0 / (params.d_model as f64).sqrt(), trace),
            k: params.k.clone(),
        })
    }

    /// `e_q · q · kᵀ`, the query side of `EQKE`.
    pub fn query_side(&self, trace: &mut FlopTrace) -> Result<Matrix> {
        self.e_q.matmul(&self.q, trace)?.matmul_t(&self.k, trace)
    }

    pub fn eqke(&self, trace: &mut FlopTrace) -> Result<Matrix> {
        self.query_side(trace)?.matmul_t(&self.e_k, trace)
    }
}

/// Attention scores split as `EQKE = low + err` with a per-query-row bound on
/// `range(err_r)`.
#[derive(Debug, Clone)]
pub struct AttentionBound {
    pub low: Matrix,
    pub err_range: Vec<f64>,
}

/// Leading singular triple of `EQKE` plus, when available, the second singular value.
#[derive(Debug, Clone)]
pub struct Rank1 {
    pub sigma: f64,
    pub sigma2: f64,
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
}

pub fn eqke_rank1(f: &QkFactors, trace: &mut FlopTrace) -> Result<Rank1> {
    let a = f.query_side(trace)?;
    let b = f.e_k.transpose();
    let inner = a.rows().min(a.cols());
    let top = factored_top_svd(&a, &b, inner.min(2), trace)?;
    Ok(Rank1 {
        sigma: top.s[0],
        sigma2: top.s.get(1).copied().unwrap_or(0.0),
        dq: top.u_col(0),
        dk: top.v_col(0),
    })
}

/// `EQKE = σ₁ d_q d_kᵀ + err`, `err = (I − d_q d_qᵀ) E_q Q Kᵀ Ēᵀ`.
pub fn eqke_rank1_decompose(f: &QkFactors, trace: &mut FlopTrace) -> Result<(Rank1, Matrix, Matrix)> {
    let r1 = eqke_rank1(f, trace)?;
    let low = Matrix::outer(&r1.dq, &r1.dk).scale(r1.sigma, trace);
    let a = project_out(&f.query_side(trace)?, &r1.dq, trace)?;
    Ok((r1, low, a))
}

/// `(I − u uᵀ) M` for a unit vector `u`.
fn project_out(m: &Matrix, u: &[f64], trace: &mut FlopTrace) -> Result<Matrix> {
    let coeff = m.vec_mul(u, trace)?;
    let proj = Matrix::outer(u, &coeff);
    m.sub(&proj, trace)
}

/// Splits `m` into `s·u wᵀ` (its top singular component) and the remainder.
fn peel_top(m: &Matrix, trace: &mut FlopTrace) -> Result<(Factor, Matrix)> {
    let d = svd(m, trace)?;
    let u = d.u_col(0);
    let w: Vec<f64> = d.v_col(0).iter().map(|x| x * d.s[0]).collect();
    let rest = m.sub(&Matrix::outer(&u, &w), trace)?;
    Ok((Factor::RankOne { u, w }, rest))
}

/// Two-component decomposition of `EQKE`.
///
/// Each token embedding is split into its component along the leading `EQKE`
/// direction, the top singular component of the remainder, and a residual; `Q`
/// and `K` lose their top singular components. Of the 36 products, the 35 that
/// contain a rank-one factor are summed exactly into `low`; `residual` is the
/// remaining chain `[E⊥_q, Q⊥, K⊥ᵀ, E⊥_kᵀ]`.
#[derive(Debug, Clone)]
pub struct Rank2Decomposition {
    pub low: Matrix,
    pub residual: [Matrix; 4],
    pub terms: usize,
}

pub fn eqke_rank2_decompose(f: &QkFactors, trace: &mut FlopTrace) -> Result<Rank2Decomposition> {
    let r1 = eqke_rank1(f, trace)?;
    let split_embed = |e: &Matrix, dir: &[f64], trace: &mut FlopTrace| -> Result<[Factor; 3]> {
        let along = e.vec_mul(dir, trace)?;
        let first = Factor::RankOne {
            u: dir.to_vec(),
            w: along.clone(),
        };
        let perp = e.sub(&Matrix::outer(dir, &along), trace)?;
        let (second, rest) = peel_top(&perp, trace)?;
        Ok([first, second, Factor::Dense(rest)])
    };
    let xq = split_embed(&f.e_q, &r1.dq, trace)?;
    let xk = split_embed(&f.e_k, &r1.dk, trace)?;
    let (q0, q_rest) = peel_top(&f.q, trace)?;
    let (k0, k_rest) = peel_top(&f.k, trace)?;
    let qs = [q0, Factor::Dense(q_rest)];
    let ks = [k0.transpose(), Factor::Dense(k_rest).transpose()];
    let ys: Vec<Factor> = xk.iter().map(Factor::transpose).collect();

    let v = f.e_q.rows();
    let mut low = Matrix::zeros(v, v);
    let mut terms = 0;
    for x in &xq {
        for q in &qs {
            for k in &ks {
                for y in &ys {
                    let chain = [x, q, k, y];
                    if chain.iter().all(|c| matches!(c, Factor::Dense(_))) {
                        continue;
                    }
                    let (left, right) = rank_one_product(&chain, trace)?;
                    for (i, li) in left.iter().enumerate() {
                        for (o, rj) in low.row_mut(i).iter_mut().zip(&right) {
                            *o += li * rj;
                        }
                    }
                    trace.add(2 * (v * v) as u64);
                    terms += 1;
                }
            }
        }
    }
    let dense = |fac: &Factor| match fac {
        Factor::Dense(m) => m.clone(),
        other => other.dense(),
    };
    Ok(Rank2Decomposition {
        low,
        residual: [dense(&xq[2]), dense(&qs[1]), dense(&ks[1]), dense(&ys[2])],
        terms,
    })
}

/// Writes a chain containing a rank-one factor as `left · rightᵀ`.
fn rank_one_product(chain: &[&Factor], trace: &mut FlopTrace) -> Result<(Vec<f64>, Vec<f64>)> {
    let pivot = chain
        .iter()
        .position(|c| matches!(c, Factor::RankOne { .. }))
        .expect("chain has a rank-one factor");
    let Factor::RankOne { u, w } = chain[pivot] else {
        unreachable!()
    };
    let mut left = u.clone();
    for fac in chain[..pivot].iter().rev() {
        left = match fac {
            Factor::Dense(m) => m.mul_vec(&left, trace)?,
            Factor::RankOne { u: fu, w: fw } => {
                let s = crate::tensor::dot(fw, &left);
                trace.add(2 * fw.len() as u64 + fu.len() as u64);
                fu.iter().map(|x| x * s).collect()
            }
        };
    }
    let mut right = w.clone();
    for fac in &chain[pivot + 1..] {
        right = match fac {
            Factor::Dense(m) => m.vec_mul(&right, trace)?,
            Factor::RankOne { u: fu, w: fw } => {
                let s = crate::tensor::dot(fu, &right);
                trace.add(2 * fu.len() as u64 + fw.len() as u64);
                fw.iter().map(|x| x * s).collect()
            }
        };
    }
    Ok((left, right))
}

/// Chooses the per-row bound over every way of cutting the chain into two
/// multiplied-out halves, optionally with a mean summary on the left half.
fn best_cut_bounds(chain: &[Matrix; 4], with_mean: bool, trace: &mut FlopTrace) -> Result<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    for cut in 1..chain.len() {
        let mut left = chain[0].clone();
        for m in &chain[1..cut] {
            left = left.matmul(m, trace)?;
        }
        let mut right = chain[cut].clone();
        for m in &chain[cut + 1..] {
            right = right.matmul(m, trace)?;
        }
        let summary = with_mean.then(|| left.col_means(trace));
        let rows = row_diff_bounds(&[&left, &right], &[summary], trace)?;
        best = Some(match best {
            None => rows,
            Some(b) => b.iter().zip(&rows).map(|(x, y)| x.min(*y)).collect(),
        });
    }
    Ok(best.expect("chain of four has cuts"))
}

/// Recursive bound on the full chain and on the chain with its middle pair
/// multiplied, whichever is smaller per row.
fn recursive_bounds(chain: &[Matrix; 4], summarise: fn(usize) -> bool, trace: &mut FlopTrace) -> Result<Vec<f64>> {
    let summaries = |ms: &[&Matrix], trace: &mut FlopTrace| -> Vec<Option<Vec<f64>>> {
        ms[..ms.len() - 1]
            .iter()
            .enumerate()
            .map(|(p, m)| summarise(p).then(|| m.col_means(trace)))
            .collect()
    };
    let full: Vec<&Matrix> = chain.iter().collect();
    let s = summaries(&full, trace);
    let a = row_diff_bounds(&full, &s, trace)?;
    let mid = chain[1].matmul(&chain[2], trace)?;
    let short = [&chain[0], &mid, &chain[3]];
    let s = summaries(&short, trace);
    let b = row_diff_bounds(&short, &s, trace)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
}

/// Low-rank part of the attention scores and per-query-row error bounds for a variant.
pub fn attention_bound(f: &QkFactors, variant: AttnVariant, trace: &mut FlopTrace) -> Result<AttentionBound> {
    let v = f.e_q.rows();
    match variant {
        AttnVariant::ExactEqke => Ok(AttentionBound {
            low: f.eqke(trace)?,
            err_range: vec![0.0; v],
        }),
        AttnVariant::MaxDiffExact => {
            let (_, low, _) = eqke_rank1_decompose(f, trace)?;
            let err = f.eqke(trace)?.sub(&low, trace)?;
            Ok(AttentionBound {
                err_range: row_diff_range(&err, trace),
                low,
            })
        }
        AttnVariant::Svd => {
            let (r1, low, _) = eqke_rank1_decompose(f, trace)?;
            Ok(AttentionBound {
                low,
                err_range: vec![std::f64::consts::SQRT_2 * r1.sigma2; v],
            })
        }
        AttnVariant::MaxDiff | AttnVariant::MeanMaxDiff => {
            let (_, low, a_perp) = eqke_rank1_decompose(f, trace)?;
            let b = f.e_k.transpose();
            let k = a_perp.rows().min(a_perp.cols());
            let err = factored_top_svd(&a_perp, &b, k, trace)?;
            let us = Matrix::from_fn(v, k, |i, j| err.u[(i, j)] * err.s[j]);
            let vt = err.v.transpose();
            trace.add((v * k) as u64);
            let summary = (variant == AttnVariant::MeanMaxDiff).then(|| us.col_means(trace));
            Ok(AttentionBound {
                err_range: row_diff_bounds(&[&us, &vt], &[summary], trace)?,
                low,
            })
        }
        _ => {
            let dec = eqke_rank2_decompose(f, trace)?;
            let err_range = match variant {
                AttnVariant::MaxDiffSubproduct => best_cut_bounds(&dec.residual, false, trace)?,
                AttnVariant::MeanMaxDiffSubproduct => best_cut_bounds(&dec.residual, true, trace)?,
                AttnVariant::MaxDiffSubproductRecursive => recursive_bounds(&dec.residual, |_| false, trace)?,
                AttnVariant::MeanMaxDiffSubproductRecursive => recursive_bounds(&dec.residual, |p| p == 0, trace)?,
                _ => recursive_bounds(&dec.residual, |_| true, trace)?,
            };
            Ok(AttentionBound {
                low: dec.low,
                err_range,
            })
        }
    }
}

/// Per-query-row bounds on the spread of the skip-path logits.
///
/// With `centered`, the bound is on `(E_q − mean(E_q)) U` and `mean_row` holds
/// `mean(E_q) U`, the query-averaged logits.
#[derive(Debug, Clone)]
pub struct EuBound {
    pub row_range: Vec<f64>,
    pub mean_row: Option<Vec<f64>>,
    /// Materialised `E_q U` (uncentred) for the exact variants.
    pub exact: Option<Matrix>,
}

pub fn eu_bound(
    e_q: &Matrix,
    u: &Matrix,
    variant: EuVariant,
    centered: bool,
    trace: &mut FlopTrace,
) -> Result<EuBound> {
    let (mean_row, x) = if centered {
        let mean = e_q.col_means(trace);
        let centred = Matrix::from_fn(e_q.rows(), e_q.cols(), |r, c| e_q[(r, c)] - mean[c]);
        trace.add((e_q.rows() * e_q.cols()) as u64);
        (Some(u.vec_mul(&mean, trace)?), centred)
    } else {
        (None, e_q.clone())
    };
    let mut exact = None;
    let row_range = match variant {
        EuVariant::MaxDiffExact | EuVariant::GlobalMaxDiffExact => {
            let prod = x.matmul(u, trace)?;
            let mut rr = row_diff_range(&prod, trace);
            if variant == EuVariant::GlobalMaxDiffExact {
                let g = max_or_zero(&rr);
                rr.iter_mut().for_each(|r| *r = g);
            }
            exact = Some(match &mean_row {
                Some(m) => prod.add_row_broadcast(m, trace)?,
                None => prod,
            });
            rr
        }
        EuVariant::MaxDiff => row_diff_bounds(&[&x, u], &[None], trace)?,
        EuVariant::MeanQueryMaxDiff => {
            let h = x.col_means(trace);
            row_diff_bounds(&[&x, u], &[Some(h)], trace)?
        }
        EuVariant::SvdQueryMaxDiff => {
            let d = svd(&x, trace)?;
            let w = d.v_col(0);
            let wu_range = range(&u.vec_mul(&w, trace)?);
            let ur = row_diff_range(u, trace);
            let rows = (0..x.rows())
                .map(|r| {
                    let row = x.row(r);
                    let proj = crate::tensor::dot(row, &w);
                    proj.abs() * wu_range
                        + row
                            .iter()
                            .zip(&w)
                            .zip(&ur)
                            .map(|((xk, wk), rk)| (xk - proj * wk).abs() * rk)
                            .sum::<f64>()
                })
                .collect();
            trace.add((5 * x.rows() * x.cols()) as u64);
            rows
        }
    };
    Ok(EuBound {
        row_range,
        mean_row,
        exact,
    })
}
