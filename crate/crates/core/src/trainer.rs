//! Seeded training on uniformly sampled sequences labelled with their maximum.
//!
//! Gradients are derived by hand for the final-position cross-entropy; only the
//! last attention row contributes to the loss, so the backward pass never forms
//! the full attention pattern.

use crate::error::{Error, Result};
use crate::model::{ModelMeta, ModelParams};
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub d_vocab: usize,
    pub d_model: usize,
    pub n_ctx: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_vocab: 64,
            d_model: 32,
            n_ctx: 4,
            steps: 3000,
            batch_size: 128,
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        ModelParams::zeros(self.d_vocab, self.d_model, self.n_ctx).map(|_| ())
    }
}

/// Seeded ChaCha8 stream. ChaCha is counter based, so a seed reproduces the same
/// values on every platform.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Gaussian initialisation with standard deviation `1/√d_model` for every matrix,
/// drawn in file order.
pub fn init_params(config: &TrainConfig) -> Result<ModelParams> {
    init_params_with_std(
        config.seed,
        config.d_vocab,
        config.d_model,
        config.n_ctx,
        1.0 / (config.d_model as f64).sqrt(),
    )
}

pub fn init_params_with_std(seed: u64, d_vocab: usize, d_model: usize, n_ctx: usize, std: f64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(d_vocab, d_model, n_ctx)?;
    let mut r = rng(seed, INIT_STREAM);
    for m in params.matrices_mut() {
        for x in m.as_mut_slice() {
            let z: f64 = r.sample(StandardNormal);
            *x = std * z;
        }
    }
    Ok(params)
}

/// `batch_size` sequences with tokens uniform on `0..d_vocab`, labelled by their maximum.
pub fn sample_batch(
    rng: &mut impl Rng,
    batch_size: usize,
    n_ctx: usize,
    d_vocab: usize,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let seqs: Vec<Vec<usize>> = (0..batch_size)
        .map(|_| {
            (0..n_ctx)
                .map(|_| rng.random_range(0..d_vocab as u32) as usize)
                .collect()
        })
        .collect();
    let labels = seqs.iter().map(|s| *s.iter().max().expect("n_ctx > 0")).collect();
    (seqs, labels)
}

/// Mean cross-entropy at the final position and its gradient with respect to
/// every weight matrix (returned in a `ModelParams` of the same shape).
pub fn loss_and_grads(params: &ModelParams, seqs: &[Vec<usize>], labels: &[usize]) -> Result<(f64, ModelParams)> {
    if seqs.is_empty() || seqs.len() != labels.len() {
        return Err(Error::InvalidConfig(
            "batch and labels must be non-empty and aligned".into(),
        ));
    }
    let (v, d, n) = (params.d_vocab, params.d_model, params.n_ctx);
    for s in seqs {
        params.check_sequence(s)?;
    }
    let mut g = ModelParams::zeros(v, d, n)?;
    let scale = 1.0 / (d as f64).sqrt();
    let inv_b = 1.0 / seqs.len() as f64;
    let mut loss = 0.0;

    let mut h = vec![0.0; n * d];
    let mut keys = vec![0.0; n * d];
    let mut vals = vec![0.0; n * d];
    let mut dh = vec![0.0; n * d];
    let mut a = vec![0.0; n];
    let mut q = vec![0.0; d];
    let mut o = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut logits = vec![0.0; v];
    let mut dr = vec![0.0; d];
    let mut d_o = vec![0.0; d];
    let mut dq = vec![0.0; d];
    let mut da = vec![0.0; n];
    let mut tmp = vec![0.0; d];

    for (seq, &label) in seqs.iter().zip(labels) {
        for (i, &t) in seq.iter().enumerate() {
            for j in 0..d {
                h[i * d + j] = params.e[(t, j)] + params.p[(i, j)];
            }
        }
        let last = &h[(n - 1) * d..n * d];
        vec_mat(last, &params.q, &mut q);
        for i in 0..n {
            vec_mat(&h[i * d..(i + 1) * d], &params.k, &mut keys[i * d..(i + 1) * d]);
            vec_mat(&h[i * d..(i + 1) * d], &params.v, &mut vals[i * d..(i + 1) * d]);
            a[i] = scale * dotp(&q, &keys[i * d..(i + 1) * d]);
        }
        softmax(&mut a);
        o.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            for j in 0..d {
                o[j] += a[i] * vals[i * d + j];
            }
        }
        vec_mat(&o, &params.o, &mut r);
        for j in 0..d {
            r[j] += h[(n - 1) * d + j];
        }
        vec_mat(&r, &params.u, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[label];

        // dℓ = softmax(ℓ) − onehot(label), averaged over the batch.
        for (c, l) in logits.iter_mut().enumerate() {
            *l = ((*l - lse).exp() - if c == label { 1.0 } else { 0.0 }) * inv_b;
        }
        let dl = &logits;
        outer_acc(&mut g.u, &r, dl);
        mat_vec(&params.u, dl, &mut dr);

        outer_acc(&mut g.o, &o, &dr);
        mat_vec(&params.o, &dr, &mut d_o);

        dh.iter_mut().for_each(|x| *x = 0.0);
        dh[(n - 1) * d..].copy_from_slice(&dr);

        let mut weighted = 0.0;
        for i in 0..n {
            da[i] = dotp(&d_o, &vals[i * d..(i + 1) * d]);
            weighted += a[i] * da[i];
        }
        dq.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let hi = &h[i * d..(i + 1) * d];
            // Value path.
            for (t, x) in tmp.iter_mut().zip(&d_o) {
                *t = a[i] * x;
            }
            outer_acc(&mut g.v, hi, &tmp);
            mat_vec_acc(&params.v, &tmp, &mut dh[i * d..(i + 1) * d]);
            // Key path.
            let ds = a[i] * (da[i] - weighted);
            let ki = &keys[i * d..(i + 1) * d];
            for (x, k) in dq.iter_mut().zip(ki) {
                *x += scale * ds * k;
            }
            for (t, x) in tmp.iter_mut().zip(&q) {
                *t = scale * ds * x;
            }
            outer_acc(&mut g.k, hi, &tmp);
            mat_vec_acc(&params.k, &tmp, &mut dh[i * d..(i + 1) * d]);
        }
        outer_acc(&mut g.q, &h[(n - 1) * d..n * d], &dq);
        mat_vec_acc(&params.q, &dq, &mut dh[(n - 1) * d..n * d]);

        for (i, &t) in seq.iter().enumerate() {
            for j in 0..d {
                g.e[(t, j)] += dh[i * d + j];
                g.p[(i, j)] += dh[i * d + j];
            }
        }
    }
    Ok((loss * inv_b, g))
}

/// AdamW with decoupled weight decay, applied before the bias-corrected Adam step.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .matrices()
                .iter()
                .map(|m| vec![0.0; m.as_slice().len()])
                .collect()
        };
        Self {
            lr,
            betas,
            eps,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (k, (p, g)) in params.matrices_mut().into_iter().zip(grads.matrices()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (x, &gi)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                *x *= decay;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub meta: ModelMeta,
}

/// Trains from scratch. Identical configs give bit-identical weights.
pub fn train(config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut params = init_params(config)?;
    let mut opt = AdamW::new(&params, config.lr, config.betas, config.eps, config.weight_decay);
    let mut data = rng(config.seed, DATA_STREAM);
    let mut last_loss = f64::NAN;
    for step in 0..config.steps {
        let (seqs, labels) = sample_batch(&mut data, config.batch_size, config.n_ctx, config.d_vocab);
        let (loss, grads) = loss_and_grads(&params, &seqs, &labels)?;
        if !loss.is_finite() || grads.matrices().iter().any(|m| !m.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(&mut params, &grads);
        last_loss = loss;
    }
    Ok(TrainedModel {
        params,
        meta: ModelMeta {
            seed: config.seed,
            steps: config.steps,
            batch_size: config.batch_size,
            final_train_loss: last_loss,
        },
    })
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = x · M`.
fn vec_mat(x: &[f64], m: &Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (p, &xp) in x.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(m.row(p)) {
            *o += xp * w;
        }
    }
}

/// `out = M · y`.
fn mat_vec(m: &Matrix, y: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dotp(m.row(r), y);
    }
}

fn mat_vec_acc(m: &Matrix, y: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += dotp(m.row(r), y);
    }
}

/// `M += x yᵀ`.
fn outer_acc(m: &mut Matrix, x: &[f64], y: &[f64]) {
    for (r, &xr) in x.iter().enumerate() {
        for (w, yc) in m.row_mut(r).iter_mut().zip(y) {
            *w += xr * yc;
        }
    }
}

fn softmax(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    x.iter_mut().for_each(|v| *v /= s);
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
