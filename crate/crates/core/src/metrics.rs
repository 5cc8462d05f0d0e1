//! Strategy accounting and interpretation statistics.

use crate::certify::{AttnVariant, Combine, EuVariant, Strategy};
use crate::error::{Error, Result};
use crate::model::PathMatrices;
use crate::tensor::{svd, FlopTrace};
use serde::{Deserialize, Serialize};

/// One black-box table a proof consults: `inputs` entries of `outputs` reals each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlackBox {
    pub name: &'static str,
    pub inputs: u64,
    pub outputs: u64,
}

impl BlackBox {
    fn new(name: &'static str, inputs: u64, outputs: u64) -> Self {
        Self { name, inputs, outputs }
    }

    pub fn size(&self) -> u64 {
        self.inputs.saturating_mul(self.outputs)
    }
}

/// Black-box tables each strategy reads without explaining them.
pub fn black_boxes(strategy: &Strategy, d_vocab: usize, d_model: usize, n_ctx: usize) -> Vec<BlackBox> {
    let (v, d, n) = (d_vocab as u64, d_model as u64, n_ctx as u64);
    let bb = BlackBox::new;
    match strategy {
        Strategy::Brute => vec![bb("model", v.saturating_pow(n as u32), v)],
        Strategy::Cubic => vec![
            bb("EQKE", v, v),
            bb("EVOU", v, v),
            bb("EU", v, v),
            bb("EQKP", v, n),
            bb("PVOU", n, v),
        ],
        Strategy::Subcubic(cfg) => {
            let mut out = vec![bb("EVOU", v, v), bb("EQKP", v, n), bb("PVOU", n, v)];
            match cfg.eu {
                EuVariant::MaxDiffExact => out.push(bb("EU row spread", v, 1)),
                EuVariant::GlobalMaxDiffExact => out.push(bb("EU global spread", 1, 1)),
                EuVariant::MaxDiff => out.extend([bb("E_q U row factor", v, d), bb("U spread", d, 1)]),
                EuVariant::MeanQueryMaxDiff => out.extend([
                    bb("E_q U row factor", v, d),
                    bb("U spread", d, 1),
                    bb("query mean", d, 1),
                ]),
                EuVariant::SvdQueryMaxDiff => out.extend([
                    bb("E_q U row factor", v, d),
                    bb("U spread", d, 1),
                    bb("query direction", d, 1),
                    bb("query projection", v, 1),
                ]),
            }
            match cfg.attn {
                AttnVariant::ExactEqke => out.push(bb("EQKE", v, v)),
                AttnVariant::MaxDiffExact | AttnVariant::MaxDiff => out.extend([
                    bb("EQKE query direction", v, 1),
                    bb("EQKE key direction", v, 1),
                    bb("residual spread", v, 1),
                ]),
                AttnVariant::Svd => out.extend([
                    bb("EQKE query direction", v, 1),
                    bb("EQKE key direction", v, 1),
                    bb("second singular value", 1, 1),
                ]),
                AttnVariant::MeanMaxDiff => out.extend([
                    bb("EQKE query direction", v, 1),
                    bb("EQKE key direction", v, 1),
                    bb("residual spread", v, 1),
                    bb("residual mean", d, 1),
                ]),
                AttnVariant::MaxDiffSubproduct
                | AttnVariant::MeanMaxDiffSubproduct
                | AttnVariant::MaxDiffSubproductRecursive
                | AttnVariant::MeanMaxDiffSubproductRecursive
                | AttnVariant::MeanRecursiveMaxDiffSubproductRecursive => out.extend([
                    bb("embedding directions", 4, v + d),
                    bb("QK directions", 4, d),
                    bb("residual spread", v, 1),
                ]),
            }
            if cfg.combine == Combine::MeanQueryDiff {
                out.push(bb("query-averaged logits", v, 1));
            }
            out
        }
    }
}

/// Free real scalars in the strategy's black-box tables.
pub fn unexplained_dimensionality(strategy: &Strategy, d_vocab: usize, d_model: usize, n_ctx: usize) -> u64 {
    black_boxes(strategy, d_vocab, d_model, n_ctx)
        .iter()
        .fold(0u64, |acc, b| acc.saturating_add(b.size()))
}

/// `log2(x)` rounded to the nearest integer, the form reported in summary tables.
pub fn rounded_log2(x: f64) -> i32 {
    x.log2().round() as i32
}

/// Bound divided by true accuracy.
pub fn normalized_bound(bound: f64, exact: f64) -> Result<f64> {
    if exact == 0.0 {
        return Err(Error::ZeroDenominator("exact accuracy is zero".into()));
    }
    Ok(bound / exact)
}

/// Summary statistics of the attention and copying circuits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretationStats {
    /// `σ1/σ2` of EQKE; infinite when EQKE has rank at most one.
    pub sigma_ratio: f64,
    /// Average increase in the rank-one attention score per key token.
    pub attention_slope: f64,
    /// Smallest `t` such that every EVOU row `r ≥ t` peaks strictly on its diagonal.
    pub copy_threshold: usize,
    pub eqkp_mean_abs: f64,
    pub eu_mean_abs: f64,
}

pub fn interpretation_stats(paths: &PathMatrices) -> Result<InterpretationStats> {
    let v = paths.d_vocab;
    let dec = svd(&paths.eqke, &mut FlopTrace::new())?;
    let s1 = dec.s.first().copied().unwrap_or(0.0);
    let s2 = dec.s.get(1).copied().unwrap_or(0.0);
    let sigma_ratio = if s2 > 0.0 { s1 / s2 } else { f64::INFINITY };

    let attention_slope = if v > 1 && s1 > 0.0 {
        let u = dec.u_col(0);
        let k = dec.v_col(0);
        let query_mean = u.iter().sum::<f64>() / v as f64;
        s1 * query_mean * (k[v - 1] - k[0]) / (v - 1) as f64
    } else {
        0.0
    };

    let dominant = |r: usize| {
        let row = paths.evou.row(r);
        (0..v).all(|c| c == r || row[r] > row[c])
    };
    let copy_threshold = (0..v).rev().take_while(|&r| dominant(r)).last().unwrap_or(v);

    let mean_abs = |xs: &[f64]| xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len().max(1) as f64;
    Ok(InterpretationStats {
        sigma_ratio,
        attention_slope,
        copy_threshold,
        eqkp_mean_abs: mean_abs(paths.eqkp.as_slice()),
        eu_mean_abs: mean_abs(paths.eu.as_slice()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::SubcubicConfig;
    use crate::tensor::Matrix;

    fn paths_with(eqke: Matrix, evou: Matrix) -> PathMatrices {
        let v = eqke.rows();
        PathMatrices {
            d_vocab: v,
            n_ctx: 2,
            eqke,
            eqkp: Matrix::zeros(v, 2),
            evou,
            pvou: Matrix::zeros(2, v),
            eu: Matrix::zeros(v, v),
        }
    }

    fn strategy(eu: EuVariant, attn: AttnVariant) -> Strategy {
        Strategy::Subcubic(SubcubicConfig {
            eu,
            attn,
            combine: Combine::MeanQueryDiff,
        })
    }

    #[test]
    fn worked_example_single_table() {
        assert_eq!(BlackBox::new("f", 64, 2).size(), 128);
    }

    #[test]
    fn brute_and_cubic_at_full_scale() {
        assert_eq!(unexplained_dimensionality(&Strategy::Brute, 64, 32, 4), 1 << 30);
        let cubic = unexplained_dimensionality(&Strategy::Cubic, 64, 32, 4);
        assert_eq!(cubic, 12800);
        assert_eq!(rounded_log2(cubic as f64), 14);
    }

    #[test]
    fn subcubic_rounds_into_table_range() {
        for s in Strategy::all().into_iter().skip(2) {
            let r = rounded_log2(unexplained_dimensionality(&s, 64, 32, 4) as f64);
            assert!((12..=13).contains(&r), "{s}: 2^{r}");
        }
        let base = unexplained_dimensionality(&strategy(EuVariant::MaxDiffExact, AttnVariant::ExactEqke), 64, 32, 4);
        let low = unexplained_dimensionality(
            &strategy(EuVariant::MaxDiffExact, AttnVariant::MaxDiffSubproduct),
            64,
            32,
            4,
        );
        let svd = unexplained_dimensionality(&strategy(EuVariant::MaxDiffExact, AttnVariant::Svd), 64, 32, 4);
        assert_eq!(
            (
                rounded_log2(base as f64),
                rounded_log2(low as f64),
                rounded_log2(svd as f64)
            ),
            (13, 12, 12)
        );
    }

    #[test]
    fn ordering_brute_cubic_subcubic() {
        let cubic = unexplained_dimensionality(&Strategy::Cubic, 64, 32, 4);
        assert!(unexplained_dimensionality(&Strategy::Brute, 64, 32, 4) > cubic);
        for s in Strategy::all().into_iter().skip(2) {
            assert!(unexplained_dimensionality(&s, 64, 32, 4) < cubic);
        }
    }

    #[test]
    fn normalized() {
        assert_eq!(normalized_bound(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(normalized_bound(0.0, 0.9).unwrap(), 0.0);
        assert!(matches!(normalized_bound(0.1, 0.0), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn rank_one_attention_has_infinite_ratio_and_linear_slope() {
        let v = 6;
        let q: Vec<f64> = vec![1.0; v];
        let k: Vec<f64> = (0..v).map(|t| 2.0 * t as f64).collect();
        let stats = interpretation_stats(&paths_with(Matrix::outer(&q, &k), Matrix::identity(v))).unwrap();
        assert_eq!(stats.sigma_ratio, f64::INFINITY);
        assert!((stats.attention_slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_identity_copies_everywhere() {
        let v = 5;
        let evou = Matrix::identity(v).scale(10.0, &mut FlopTrace::new());
        let stats = interpretation_stats(&paths_with(Matrix::identity(v), evou)).unwrap();
        assert_eq!(stats.copy_threshold, 0);
        assert_eq!(stats.sigma_ratio, 1.0);
    }

    #[test]
    fn copy_threshold_skips_low_rows() {
        let v = 4;
        let mut evou = Matrix::identity(v);
        evou[(1, 3)] = 5.0;
        let stats = interpretation_stats(&paths_with(Matrix::identity(v), evou)).unwrap();
        assert_eq!(stats.copy_threshold, 2);
    }
}
