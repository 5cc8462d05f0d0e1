//! One-layer, one-head, attention-only transformer without biases, plus its
//! decomposition into token-indexed path matrices.

use crate::error::{Error, Result};
use crate::tensor::{masked_softmax, FlopTrace, Matrix};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"MAXK";
const FORMAT_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 16;

/// Model weights. Matrices act on row vectors: `q = h·Q`, `logits = h·U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d_vocab: usize,
    pub d_model: usize,
    pub n_ctx: usize,
    /// Token embedding, `d_vocab × d_model`.
    pub e: Matrix,
    /// Positional embedding, `n_ctx × d_model`.
    pub p: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    /// Unembedding, `d_model × d_vocab`.
    pub u: Matrix,
}

impl ModelParams {
    pub fn zeros(d_vocab: usize, d_model: usize, n_ctx: usize) -> Result<Self> {
        validate_dims(d_vocab, d_model, n_ctx)?;
        let sq = || Matrix::zeros(d_model, d_model);
        Ok(Self {
            d_vocab,
            d_model,
            n_ctx,
            e: Matrix::zeros(d_vocab, d_model),
            p: Matrix::zeros(n_ctx, d_model),
            q: sq(),
            k: sq(),
            v: sq(),
            o: sq(),
            u: Matrix::zeros(d_model, d_vocab),
        })
    }

    /// Matrices in file order: E, P, Q, K, V, O, U.
    pub fn matrices(&self) -> [&Matrix; 7] {
        [&self.e, &self.p, &self.q, &self.k, &self.v, &self.o, &self.u]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.e,
            &mut self.p,
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.o,
            &mut self.u,
        ]
    }

    fn expected_shapes(&self) -> [(usize, usize); 7] {
        expected_shapes(self.d_vocab, self.d_model, self.n_ctx)
    }

    pub fn validate(&self) -> Result<()> {
        validate_dims(self.d_vocab, self.d_model, self.n_ctx)?;
        let names = ["E", "P", "Q", "K", "V", "O", "U"];
        for ((m, shape), name) in self.matrices().iter().zip(self.expected_shapes()).zip(names) {
            if m.shape() != shape {
                return Err(Error::InvalidDimensions(format!(
                    "{name} is {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("weight matrix {name}")));
            }
        }
        Ok(())
    }

    pub fn check_sequence(&self, seq: &[usize]) -> Result<()> {
        if seq.len() != self.n_ctx {
            return Err(Error::InvalidShape(format!(
                "sequence of length {} for n_ctx {}",
                seq.len(),
                self.n_ctx
            )));
        }
        if let Some(&t) = seq.iter().find(|&&t| t >= self.d_vocab) {
            return Err(Error::InvalidShape(format!(
                "token {t} outside vocabulary of {}",
                self.d_vocab
            )));
        }
        Ok(())
    }

    /// Logits at the final position, computed directly from the weights.
    pub fn forward(&self, seq: &[usize], trace: &mut FlopTrace) -> Result<Vec<f64>> {
        self.check_sequence(seq)?;
        let (n, v) = (self.n_ctx, self.d_vocab);
        let onehot = Matrix::from_fn(n, v, |i, t| if seq[i] == t { 1.0 } else { 0.0 });
        let h0 = onehot.matmul(&self.e, trace)?.add(&self.p, trace)?;
        let queries = h0.matmul(&self.q, trace)?;
        let keys = h0.matmul(&self.k, trace)?;
        let scores = queries
            .matmul_t(&keys, trace)?
            .scale(1.0 / (self.d_model as f64).sqrt(), trace);
        let attn = masked_softmax(&scores, trace)?;
        let values = h0.matmul(&self.v, trace)?.matmul(&self.o, trace)?;
        let h1 = attn.matmul(&values, trace)?.add(&h0, trace)?;
        self.u.vec_mul(h1.row(n - 1), trace)
    }

    /// Splits the model into the five token- and position-indexed path matrices.
    pub fn decompose_paths(&self, trace: &mut FlopTrace) -> Result<PathMatrices> {
        self.validate()?;
        let n = self.n_ctx;
        let p_avg = self.p.col_means(trace);
        let e_bar = self.e.add_row_broadcast(&p_avg, trace)?;
        let e_q = self.e.add_row_broadcast(self.p.row(n - 1), trace)?;
        let p_hat = Matrix::from_fn(n, self.d_model, |i, j| self.p[(i, j)] - p_avg[j]);
        trace.add((n * self.d_model) as u64);

        let qk = self
            .q
            .matmul_t(&self.k, trace)?
            .scale(1.0 / (self.d_model as f64).sqrt(), trace);
        let eqk = e_q.matmul(&qk, trace)?;
        let eqke = eqk.matmul_t(&e_bar, trace)?;
        let eqkp = eqk.matmul_t(&p_hat, trace)?;

        let vou = self.v.matmul(&self.o, trace)?.matmul(&self.u, trace)?;
        let evou = e_bar.matmul(&vou, trace)?;
        let pvou = p_hat.matmul(&vou, trace)?;
        let eu = e_q.matmul(&self.u, trace)?;

        Ok(PathMatrices {
            d_vocab: self.d_vocab,
            n_ctx: n,
            eqke,
            eqkp,
            evou,
            pvou,
            eu,
        })
    }

    /// Reads a weight file. Corrupt, truncated or non-finite files are rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::CorruptModel(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(Error::CorruptModel("missing MAXK header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != FORMAT_VERSION {
            return Err(Error::CorruptModel(format!("unsupported version {version}")));
        }
        let (v, d, n) = (word(1), word(2), word(3));
        if [v, d, n].iter().any(|&x| x == 0 || x > MAX_DIM) {
            return Err(Error::CorruptModel(format!("implausible dimensions {v}x{d}x{n}")));
        }
        let (v, d, n) = (v as usize, d as usize, n as usize);
        let shapes = expected_shapes(v, d, n);
        let count: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if bytes.len() != 20 + 8 * count {
            return Err(Error::CorruptModel(format!(
                "expected {} bytes, found {}",
                20 + 8 * count,
                bytes.len()
            )));
        }
        let mut floats = bytes[20..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |(r, c): (usize, usize)| {
            Matrix::from_vec(r, c, floats.by_ref().take(r * c).collect()).expect("sized by header")
        };
        let params = Self {
            d_vocab: v,
            d_model: d,
            n_ctx: n,
            e: take(shapes[0]),
            p: take(shapes[1]),
            q: take(shapes[2]),
            k: take(shapes[3]),
            v: take(shapes[4]),
            o: take(shapes[5]),
            u: take(shapes[6]),
        };
        params.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.matrices().iter().map(|m| m.as_slice().len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        for w in [
            FORMAT_VERSION,
            self.d_vocab as u32,
            self.d_model as u32,
            self.n_ctx as u32,
        ] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for m in self.matrices() {
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }
}

/// Training provenance stored next to a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub final_train_loss: f64,
}

impl ModelMeta {
    pub fn sidecar_path(model_path: impl AsRef<Path>) -> PathBuf {
        let mut s = model_path.as_ref().as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn save(&self, model_path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(Self::sidecar_path(model_path), json + "\n")?;
        Ok(())
    }

    pub fn load(model_path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(Self::sidecar_path(model_path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn validate_dims(d_vocab: usize, d_model: usize, n_ctx: usize) -> Result<()> {
    if d_vocab == 0 || d_model == 0 || n_ctx == 0 {
        return Err(Error::InvalidDimensions("all dimensions must be positive".into()));
    }
    if d_model > d_vocab {
        return Err(Error::InvalidDimensions(format!(
            "d_model {d_model} exceeds d_vocab {d_vocab}"
        )));
    }
    Ok(())
}

fn expected_shapes(v: usize, d: usize, n: usize) -> [(usize, usize); 7] {
    [(v, d), (n, d), (d, d), (d, d), (d, d), (d, d), (d, v)]
}

/// Index of the largest logit, lowest index on ties.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate().skip(1) {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Token- and position-indexed views of the model.
///
/// With `P̄` the mean positional row, `Ē = E + P̄`, `E_q = E + P[n−1]` and
/// `P̂ = P − P̄`:
///
/// * `eqke = E_q Q Kᵀ Ēᵀ / √d` (query token × key token)
/// * `eqkp = E_q Q Kᵀ P̂ᵀ / √d` (query token × key position)
/// * `evou = Ē V O U` (key token × output logit)
/// * `pvou = P̂ V O U` (key position × output logit)
/// * `eu = E_q U` (query token × output logit)
///
/// Attention scores are stored already scaled.
#[derive(Debug, Clone)]
pub struct PathMatrices {
    pub d_vocab: usize,
    pub n_ctx: usize,
    pub eqke: Matrix,
    pub eqkp: Matrix,
    pub evou: Matrix,
    pub pvou: Matrix,
    pub eu: Matrix,
}

impl PathMatrices {
    /// Final-position logits reassembled from the path matrices, written into `out`.
    /// `attn` is scratch space of length `n_ctx`.
    pub fn logits_into(&self, seq: &[usize], attn: &mut [f64], out: &mut [f64]) {
        let n = self.n_ctx;
        let tq = seq[n - 1];
        let qk = self.eqke.row(tq);
        let qp = self.eqkp.row(tq);
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            attn[i] = qk[seq[i]] + qp[i];
            m = m.max(attn[i]);
        }
        let mut s = 0.0;
        for a in attn.iter_mut() {
            *a = (*a - m).exp();
            s += *a;
        }
        out.copy_from_slice(self.eu.row(tq));
        for i in 0..n {
            let w = attn[i] / s;
            for ((o, e), p) in out.iter_mut().zip(self.evou.row(seq[i])).zip(self.pvou.row(i)) {
                *o += w * (e + p);
            }
        }
    }

    pub fn logits(&self, seq: &[usize]) -> Vec<f64> {
        let mut attn = vec![0.0; self.n_ctx];
        let mut out = vec![0.0; self.d_vocab];
        self.logits_into(seq, &mut attn, &mut out);
        out
    }

    /// FLOPs of one path-based evaluation.
    pub fn logits_flops(&self) -> u64 {
        let (n, v) = (self.n_ctx as u64, self.d_vocab as u64);
        n + 5 * n + 3 * n * v
    }
}
