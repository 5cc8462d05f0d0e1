//! Accuracy certificates and the strategies that produce them.

pub mod brute;
pub mod cubic;
pub mod ordering;
pub mod subcubic;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A verified lower bound on accuracy over all `d_vocab^n_ctx` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub strategy_id: String,
    /// Certified fraction of inputs answered correctly.
    pub bound: f64,
    pub certified: u64,
    pub total: u64,
    pub flops: u64,
    pub unexplained_dims: u64,
    /// Wall-clock time; the only field that varies between identical runs.
    pub wall_seconds: f64,
}

/// How the skip-path logit spread `E_q U` is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EuVariant {
    MaxDiff,
    MeanQueryMaxDiff,
    SvdQueryMaxDiff,
    MaxDiffExact,
    GlobalMaxDiffExact,
}

/// How the attention score matrix `EQKE` is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttnVariant {
    MaxDiffExact,
    ExactEqke,
    Svd,
    MaxDiff,
    MeanMaxDiff,
    MaxDiffSubproduct,
    MeanMaxDiffSubproduct,
    MaxDiffSubproductRecursive,
    MeanMaxDiffSubproductRecursive,
    MeanRecursiveMaxDiffSubproductRecursive,
}

/// Whether the query-averaged skip logits are folded into the per-output-logit
/// maximisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combine {
    MeanQueryDiff,
    DropAverageQuery,
}

impl EuVariant {
    pub const ALL: [EuVariant; 5] = [
        EuVariant::MaxDiff,
        EuVariant::MeanQueryMaxDiff,
        EuVariant::SvdQueryMaxDiff,
        EuVariant::MaxDiffExact,
        EuVariant::GlobalMaxDiffExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EuVariant::MaxDiff => "max_diff",
            EuVariant::MeanQueryMaxDiff => "mean_query+max_diff",
            EuVariant::SvdQueryMaxDiff => "svd_query+max_diff",
            EuVariant::MaxDiffExact => "max_diff_exact",
            EuVariant::GlobalMaxDiffExact => "global_max_diff_exact",
        }
    }

    /// Variants that materialise the full `E_q U` product.
    pub fn is_exact(self) -> bool {
        matches!(self, EuVariant::MaxDiffExact | EuVariant::GlobalMaxDiffExact)
    }
}

impl AttnVariant {
    pub const ALL: [AttnVariant; 10] = [
        AttnVariant::MaxDiffExact,
        AttnVariant::ExactEqke,
        AttnVariant::Svd,
        AttnVariant::MaxDiff,
        AttnVariant::MeanMaxDiff,
        AttnVariant::MaxDiffSubproduct,
        AttnVariant::MeanMaxDiffSubproduct,
        AttnVariant::MaxDiffSubproductRecursive,
        AttnVariant::MeanMaxDiffSubproductRecursive,
        AttnVariant::MeanRecursiveMaxDiffSubproductRecursive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttnVariant::MaxDiffExact => "max_diff_exact",
            AttnVariant::ExactEqke => "exact_EQKE+max_diff_exact",
            AttnVariant::Svd => "svd",
            AttnVariant::MaxDiff => "max_diff",
            AttnVariant::MeanMaxDiff => "mean+max_diff",
            AttnVariant::MaxDiffSubproduct => "max_diff_subproduct",
            AttnVariant::MeanMaxDiffSubproduct => "mean+max_diff_subproduct",
            AttnVariant::MaxDiffSubproductRecursive => "max_diff_subproduct_recursive",
            AttnVariant::MeanMaxDiffSubproductRecursive => "mean+max_diff_subproduct_recursive",
            AttnVariant::MeanRecursiveMaxDiffSubproductRecursive => "mean_recursive+max_diff_subproduct_recursive",
        }
    }

    /// Variants that peel two singular components per factor instead of one.
    pub fn uses_rank_two(self) -> bool {
        matches!(
            self,
            AttnVariant::MaxDiffSubproduct
                | AttnVariant::MeanMaxDiffSubproduct
                | AttnVariant::MaxDiffSubproductRecursive
                | AttnVariant::MeanMaxDiffSubproductRecursive
                | AttnVariant::MeanRecursiveMaxDiffSubproductRecursive
        )
    }
}

impl Combine {
    pub const ALL: [Combine; 2] = [Combine::MeanQueryDiff, Combine::DropAverageQuery];

    pub fn name(self) -> &'static str {
        match self {
            Combine::MeanQueryDiff => "mean_query+diff",
            Combine::DropAverageQuery => "drop_average_query_per_output_logit_reasoning",
        }
    }
}

fn parse_named<T: Copy>(all: &[T], name: impl Fn(T) -> &'static str, s: &str, what: &str) -> Result<T> {
    all.iter()
        .copied()
        .find(|&v| name(v) == s)
        .ok_or_else(|| Error::UnknownStrategy(format!("unknown {what} variant '{s}'")))
}

impl FromStr for EuVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_named(&Self::ALL, Self::name, s, "eu")
    }
}

impl FromStr for AttnVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_named(&Self::ALL, Self::name, s, "attention")
    }
}

impl FromStr for Combine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Combine::MeanQueryDiff),
            "off" => Ok(Combine::DropAverageQuery),
            _ => parse_named(&Self::ALL, Self::name, s, "combine"),
        }
    }
}

/// One point in the subcubic strategy grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubcubicConfig {
    pub eu: EuVariant,
    pub attn: AttnVariant,
    pub combine: Combine,
}

impl SubcubicConfig {
    /// All 5 × 10 × 2 configurations in a fixed order.
    pub fn all() -> Vec<SubcubicConfig> {
        let mut out = Vec::with_capacity(100);
        for eu in EuVariant::ALL {
            for attn in AttnVariant::ALL {
                for combine in Combine::ALL {
                    out.push(SubcubicConfig { eu, attn, combine });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Brute,
    Cubic,
    Subcubic(SubcubicConfig),
}

impl Strategy {
    /// Brute force, cubic, then the 100 subcubic configurations.
    pub fn all() -> Vec<Strategy> {
        let mut out = vec![Strategy::Brute, Strategy::Cubic];
        out.extend(SubcubicConfig::all().into_iter().map(Strategy::Subcubic));
        out
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Brute => write!(f, "brute"),
            Strategy::Cubic => write!(f, "cubic"),
            Strategy::Subcubic(c) => write!(
                f,
                "subcubic:eu={},attn={},combine={}",
                c.eu.name(),
                c.attn.name(),
                c.combine.name()
            ),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => return Ok(Strategy::Brute),
            "cubic" => return Ok(Strategy::Cubic),
            _ => {}
        }
        let rest = s
            .strip_prefix("subcubic:")
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))?;
        let (mut eu, mut attn, mut combine) = (None, None, None);
        for part in rest.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::UnknownStrategy(s.to_string()))?;
            match key {
                "eu" => eu = Some(value.parse()?),
                "attn" => attn = Some(value.parse()?),
                "combine" => combine = Some(value.parse()?),
                _ => return Err(Error::UnknownStrategy(s.to_string())),
            }
        }
        match (eu, attn, combine) {
            (Some(eu), Some(attn), Some(combine)) => Ok(Strategy::Subcubic(SubcubicConfig { eu, attn, combine })),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

/// `C(n, k)` for the small arguments used in counting.
pub(crate) fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Maximum over a range, `-inf` when empty.
pub(crate) fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}
