//! Ordering facts behind the pure-sequence reductions.
//!
//! Scores here are the attention-weighted value `s = Σ v[tᵢ]·e^{a[tᵢ]+bᵢ} / Σ e^{a[tᵢ]+bᵢ}`
//! where `a` and `v` are per-token and `b` is per-position. These helpers state the
//! facts in closed form so tests can compare them with direct evaluation.

use std::cmp::Ordering;

/// Attention-weighted value of `tokens` placed at positions with scores `b`.
pub fn sequence_score(v: &[f64], a: &[f64], b: &[f64], tokens: &[usize]) -> f64 {
    let m = tokens
        .iter()
        .zip(b)
        .map(|(&t, &bi)| a[t] + bi)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&t, &bi) in tokens.iter().zip(b) {
        let w = (a[t] + bi - m).exp();
        num += w * v[t];
        den += w;
    }
    num / den
}

fn sign(x: f64) -> i8 {
    match x.partial_cmp(&0.0) {
        Some(Ordering::Greater) => 1,
        Some(Ordering::Less) => -1,
        _ => 0,
    }
}

/// Result of exchanging two positions: the sign observed directly and the sign
/// predicted from the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapCheck {
    pub direct: i8,
    pub predicted: i8,
    /// Change of the score including a per-position offset `w`.
    pub delta_with_offset: f64,
}

impl SwapCheck {
    pub fn agrees(&self) -> bool {
        self.predicted == 0 || self.direct == self.predicted
    }
}

/// Exchanging the contents of positions `i` and `j`.
///
/// With equal attention logits the sign is `−sign(bᵢ−bⱼ)·sign(vᵢ−vⱼ)`; otherwise it
/// is `sign(aᵢ−aⱼ)·sign(bᵢ−bⱼ)·sign(s − (vᵢe^{aᵢ} − vⱼe^{aⱼ})/(e^{aᵢ} − e^{aⱼ}))`,
/// `s` being the score before the exchange.
pub fn check_swap_lemma(v: &[f64], a: &[f64], w: &[f64], b: &[f64], tokens: &[usize], i: usize, j: usize) -> SwapCheck {
    let before = sequence_score(v, a, b, tokens);
    let mut swapped = tokens.to_vec();
    swapped.swap(i, j);
    let after = sequence_score(v, a, b, &swapped);

    let (ti, tj) = (tokens[i], tokens[j]);
    let predicted = if a[ti] == a[tj] {
        -sign(b[i] - b[j]) * sign(v[ti] - v[tj])
    } else {
        let (ei, ej) = (a[ti].exp(), a[tj].exp());
        let pivot = (v[ti] * ei - v[tj] * ej) / (ei - ej);
        sign(a[ti] - a[tj]) * sign(b[i] - b[j]) * sign(before - pivot)
    };
    let offset = |seq: &[usize]| {
        let m = seq
            .iter()
            .zip(b)
            .map(|(&t, &bi)| a[t] + bi)
            .fold(f64::NEG_INFINITY, f64::max);
        let den: f64 = seq.iter().zip(b).map(|(&t, &bi)| (a[t] + bi - m).exp()).sum();
        seq.iter()
            .zip(b)
            .zip(w)
            .map(|((&t, &bi), &wi)| wi * (a[t] + bi - m).exp() / den)
            .sum::<f64>()
    };
    SwapCheck {
        direct: sign(after - before),
        predicted,
        delta_with_offset: (after + offset(&swapped)) - (before + offset(tokens)),
    }
}

/// In a sequence of two distinct tokens, exchanging positions `i` and `j` changes the
/// score with sign `−sign(bᵢ−bⱼ)·sign(v[T(i)]−v[T(j)])`, independent of `a`.
pub fn check_two_token_swap(v: &[f64], a: &[f64], b: &[f64], tokens: &[usize], i: usize, j: usize) -> SwapCheck {
    let before = sequence_score(v, a, b, tokens);
    let mut swapped = tokens.to_vec();
    swapped.swap(i, j);
    let after = sequence_score(v, a, b, &swapped);
    SwapCheck {
        direct: sign(after - before),
        predicted: -sign(b[i] - b[j]) * sign(v[tokens[i]] - v[tokens[j]]),
        delta_with_offset: after - before,
    }
}

/// Arrangements of `count_hi` copies of `hi` and the rest `lo` over positions with
/// scores `b` that minimise and maximise the score when `v[hi] ≥ v[lo]`: `hi` at
/// the lowest-`b` positions, then at the highest.
pub fn two_token_extremes(b: &[f64], hi: usize, lo: usize, count_hi: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by(|&x, &y| b[x].total_cmp(&b[y]));
    let mut t_min = vec![lo; b.len()];
    let mut t_max = vec![lo; b.len()];
    for &p in &order[..count_hi] {
        t_min[p] = hi;
    }
    for &p in &order[b.len() - count_hi..] {
        t_max[p] = hi;
    }
    (t_min, t_max)
}

/// Closed-form comparison of two pure fillings of the free positions.
///
/// `fixed_num` and `fixed_den` are the numerator and denominator contributions of
/// the fixed positions, `free_weight = Σ_{free} e^{bᵢ}`. Returns the sign of
/// `s(all x) − s(all y)`.
pub fn cmp_pure(x: usize, y: usize, v: &[f64], a: &[f64], fixed_num: f64, fixed_den: f64, free_weight: f64) -> i8 {
    let (ex, ey) = (a[x].exp(), a[y].exp());
    sign(fixed_num * (ey - ex) + fixed_den * (v[x] * ex - v[y] * ey) + free_weight * ex * ey * (v[x] - v[y]))
}
