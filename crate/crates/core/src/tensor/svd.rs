//! One-sided Jacobi singular value decomposition.

use super::{dot, norm, FlopTrace, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const PAIR_TOL: f64 = 1e-14;

/// Thin decomposition `M = U diag(s) Vᵀ` with `s` sorted descending.
///
/// `u` is `m×k` and `v` is `n×k` for `k = min(m, n)`. Each left vector is signed
/// so that its largest-magnitude entry is non-negative.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn u_col(&self, j: usize) -> Vec<f64> {
        self.u.col(j)
    }

    pub fn v_col(&self, j: usize) -> Vec<f64> {
        self.v.col(j)
    }

    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        Matrix::from_fn(self.u.rows(), self.v.rows(), |i, j| {
            (0..k).map(|p| self.u[(i, p)] * self.s[p] * self.v[(j, p)]).sum()
        })
    }

    fn truncate(self, k: usize) -> Svd {
        let keep = |m: &Matrix| Matrix::from_fn(m.rows(), k, |i, j| m[(i, j)]);
        Svd {
            u: keep(&self.u),
            v: keep(&self.v),
            s: self.s[..k].to_vec(),
        }
    }
}

/// Full thin SVD. The trace is charged the cost of checking the result:
/// both orthonormality products and the reconstruction multiply.
pub fn svd(m: &Matrix, trace: &mut FlopTrace) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let out = if m.rows() >= m.cols() {
        jacobi_tall(m)?
    } else {
        let t = jacobi_tall(&m.transpose())?;
        let mut out = Svd { u: t.v, s: t.s, v: t.u };
        complete_orthonormal(&mut out.v, &out.s);
        fix_signs(&mut out);
        out
    };
    let (r, c, k) = (m.rows() as u64, m.cols() as u64, out.s.len() as u64);
    trace.add(2 * k * r * k + 2 * k * c * k + r * k + 2 * r * k * c);
    Ok(out)
}

/// Top-`k` singular triples of `A·B` for `A: v×d`, `B: d×v`, without forming the
/// `v×v` product. Costs `O(v·d²)`.
pub fn factored_top_svd(a: &Matrix, b: &Matrix, k: usize, trace: &mut FlopTrace) -> Result<Svd> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "factored_top_svd",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let inner = a.cols().min(a.rows()).min(b.cols());
    if k == 0 || k > inner {
        return Err(Error::InvalidShape(format!(
            "requested {k} singular triples from a product of inner rank {inner}"
        )));
    }
    let sa = svd(a, trace)?;
    // C = diag(Sa) Vaᵀ B, so A·B = Ua C.
    let sv_t = Matrix::from_fn(sa.s.len(), sa.v.rows(), |i, j| sa.s[i] * sa.v[(j, i)]);
    trace.add((sa.s.len() * sa.v.rows()) as u64);
    let c = sv_t.matmul(b, trace)?;
    let sc = svd(&c, trace)?;
    let u = sa.u.matmul(&sc.u, trace)?;
    let mut out = Svd { u, s: sc.s, v: sc.v }.truncate(k);
    fix_signs(&mut out);
    Ok(out)
}

/// Hestenes one-sided Jacobi on the columns of a tall matrix.
fn jacobi_tall(m: &Matrix) -> Result<Svd> {
    let (rows, cols) = m.shape();
    // Columns of W and V are stored as rows for contiguous access.
    let mut w = m.transpose();
    let mut vt = Matrix::identity(cols);
    let mut converged = cols < 2;
    let mut worst = 0.0;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        worst = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                let gamma = dot(w.row(p), w.row(q));
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                worst = worst.max(rel);
                if rel <= PAIR_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            residual: worst,
        });
    }

    let sigma: Vec<f64> = (0..cols).map(|j| norm(w.row(j))).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let smax = sigma.iter().copied().fold(0.0, f64::max);
    let floor = smax * (rows.max(cols) as f64) * f64::EPSILON;
    let mut u = Matrix::zeros(rows, cols);
    let mut v = Matrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (j, &src) in order.iter().enumerate() {
        let sj = sigma[src];
        s.push(sj);
        if sj > floor {
            for i in 0..rows {
                u[(i, j)] = w[(src, i)] / sj;
            }
        }
        for i in 0..cols {
            v[(i, j)] = vt[(src, i)];
        }
    }
    let mut out = Svd { u, s, v };
    complete_orthonormal(
        &mut out.u,
        &out.s
            .iter()
            .map(|&x| if x > floor { x } else { 0.0 })
            .collect::<Vec<_>>(),
    );
    fix_signs(&mut out);
    Ok(out)
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Replaces the columns of `basis` paired with a zero singular value by an
/// orthonormal completion, so `basisᵀ basis = I` even for rank-deficient input.
fn complete_orthonormal(basis: &mut Matrix, s: &[f64]) {
    let (rows, k) = basis.shape();
    let mut candidate = 0;
    for j in 0..k {
        if s[j] > 0.0 {
            continue;
        }
        while candidate < rows {
            let mut e = vec![0.0; rows];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (p, &sp) in s.iter().enumerate().take(k) {
                    if p == j || (sp == 0.0 && p > j) {
                        continue;
                    }
                    let col = basis.col(p);
                    let proj = dot(&col, &e);
                    e.iter_mut().zip(&col).for_each(|(x, c)| *x -= proj * c);
                }
            }
            let len = norm(&e);
            if len > 1e-8 {
                for i in 0..rows {
                    basis[(i, j)] = e[i] / len;
                }
                break;
            }
        }
    }
}

fn fix_signs(out: &mut Svd) {
    for j in 0..out.s.len() {
        let col = out.u.col(j);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            for i in 0..out.u.rows() {
                out.u[(i, j)] = -out.u[(i, j)];
            }
            for i in 0..out.v.rows() {
                out.v[(i, j)] = -out.v[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gram(m: &Matrix) -> Matrix {
        m.transpose().matmul(m, &mut FlopTrace::new()).unwrap()
    }

    fn check(m: &Matrix) {
        let d = svd(m, &mut FlopTrace::new()).unwrap();
        let k = m.rows().min(m.cols());
        assert!(d.reconstruct().max_abs_diff(m) <= 1e-10 * m.frobenius_norm().max(1.0));
        assert!(gram(&d.u).max_abs_diff(&Matrix::identity(k)) < 1e-8);
        assert!(gram(&d.v).max_abs_diff(&Matrix::identity(k)) < 1e-8);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn known_singular_values_of_diagonal() {
        let mut m = Matrix::zeros(4, 3);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = -5.0;
        m[(2, 2)] = 3.0;
        let d = svd(&m, &mut FlopTrace::new()).unwrap();
        let expected = [5.0, 3.0, 1.0];
        for (a, b) in d.s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        check(&m);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        let v = [0.5, -1.0, 2.0];
        let m = Matrix::outer(&u, &v);
        let d = svd(&m, &mut FlopTrace::new()).unwrap();
        let expected = norm(&u) * norm(&v);
        assert!((d.s[0] - expected).abs() < 1e-10);
        assert!(d.s[1].abs() < 1e-10 && d.s[2].abs() < 1e-10);
        check(&m);
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        check(&Matrix::zeros(5, 3));
        check(&Matrix::zeros(3, 5));
    }

    #[test]
    fn sign_convention_makes_largest_left_entry_non_negative() {
        let m = Matrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let d = svd(&m, &mut FlopTrace::new()).unwrap();
        for j in 0..4 {
            let col = d.u.col(j);
            let lead = col
                .iter()
                .copied()
                .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(lead >= 0.0);
        }
    }

    #[test]
    fn factored_matches_direct_on_product() {
        let a = Matrix::from_fn(12, 4, |i, j| ((i * 5 + j * 11) % 7) as f64 - 3.0 + 0.1 * i as f64);
        let b = Matrix::from_fn(4, 12, |i, j| ((i * 3 + j * 2) % 5) as f64 - 2.0 + 0.05 * j as f64);
        let mut t = FlopTrace::new();
        let f = factored_top_svd(&a, &b, 3, &mut t).unwrap();
        let p = a.matmul(&b, &mut FlopTrace::new()).unwrap();
        let d = svd(&p, &mut FlopTrace::new()).unwrap();
        for j in 0..3 {
            assert!((f.s[j] - d.s[j]).abs() < 1e-9 * d.s[0]);
        }
        // Top triple agrees including sign.
        for i in 0..12 {
            assert!((f.u[(i, 0)] - d.u[(i, 0)]).abs() < 1e-8);
            assert!((f.v[(i, 0)] - d.v[(i, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn factored_rejects_k_above_inner_dimension() {
        let a = Matrix::zeros(8, 2);
        let b = Matrix::zeros(2, 8);
        assert!(factored_top_svd(&a, &b, 3, &mut FlopTrace::new()).is_err());
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(svd(&m, &mut FlopTrace::new()).is_err());
    }

    proptest! {
        #[test]
        fn random_matrices_decompose(
            rows in 1usize..9,
            cols in 1usize..9,
            seed in prop::collection::vec(-5.0..5.0f64, 64),
        ) {
            let m = Matrix::from_fn(rows, cols, |i, j| seed[(i * 8 + j) % 64]);
            check(&m);
        }
    }
}
