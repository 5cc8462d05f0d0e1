//! Strategy dispatch and sweep reports.

use crate::certify::brute::{brute_force, BruteOptions};
use crate::certify::cubic::cubic;
use crate::certify::subcubic::subcubic;
use crate::certify::{Certificate, Strategy};
use crate::error::Result;
use crate::metrics::{interpretation_stats, normalized_bound};
use crate::model::{ModelMeta, ModelParams};
use crate::par::Exec;
use crate::tensor::FlopTrace;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Runs one strategy. `max_sequences` caps brute-force enumeration.
pub fn run_strategy(params: &ModelParams, strategy: &Strategy, exec: Exec, max_sequences: u128) -> Result<Certificate> {
    match strategy {
        Strategy::Brute => brute_force(params, BruteOptions { exec, max_sequences }),
        Strategy::Cubic => cubic(params, exec),
        Strategy::Subcubic(cfg) => subcubic(params, *cfg, exec),
    }
}

/// One deterministic sweep row. Wall time is kept apart so reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_path: String,
    pub seed: Option<u64>,
    pub strategy_id: String,
    pub bound: f64,
    pub exact: Option<f64>,
    pub normalized: Option<f64>,
    pub flops: u64,
    pub unexplained_dims: u64,
    pub sigma_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model_path: String,
    pub strategy_id: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub exec: Exec,
    pub max_sequences: u128,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            exec: Exec::Parallel,
            max_sequences: crate::certify::brute::DEFAULT_MAX_SEQUENCES,
        }
    }
}

struct LoadedModel {
    path: String,
    params: ModelParams,
    seed: Option<u64>,
    exact: Option<Certificate>,
    sigma_ratio: f64,
}

fn load_model(path: &Path, opts: SweepOptions) -> Result<LoadedModel> {
    let params = ModelParams::load(path)?;
    let seed = ModelMeta::load(path).ok().map(|m| m.seed);
    let exact = match brute_force(
        &params,
        BruteOptions {
            exec: opts.exec,
            max_sequences: opts.max_sequences,
        },
    ) {
        Ok(c) => Some(c),
        Err(crate::Error::BudgetExceeded { .. }) => None,
        Err(e) => return Err(e),
    };
    let paths = params.decompose_paths(&mut FlopTrace::new())?;
    let sigma_ratio = interpretation_stats(&paths)?.sigma_ratio;
    Ok(LoadedModel {
        path: path.to_string_lossy().into_owned(),
        params,
        seed,
        exact,
        sigma_ratio,
    })
}

/// Certifies every model with every strategy. Rows come back in (model, strategy)
/// order whatever the completion order. Brute force runs once per model and
/// serves both as its own row and as the normaliser; it is omitted from the
/// normaliser when over budget.
pub fn sweep(models: &[PathBuf], strategies: &[Strategy], opts: SweepOptions) -> Result<Vec<(SweepRow, TimingRow)>> {
    let loaded = opts
        .exec
        .try_map_collect(models.len(), |i| load_model(&models[i], opts))?;
    let per_model = strategies.len();
    opts.exec.try_map_collect(loaded.len() * per_model, |job| {
        let model = &loaded[job / per_model];
        let strategy = &strategies[job % per_model];
        let cert = match (strategy, &model.exact) {
            (Strategy::Brute, Some(c)) => c.clone(),
            _ => run_strategy(&model.params, strategy, opts.exec, opts.max_sequences)?,
        };
        let exact = model.exact.as_ref().map(|c| c.bound);
        let normalized = exact.and_then(|s| normalized_bound(cert.bound, s).ok());
        Ok((
            SweepRow {
                model_path: model.path.clone(),
                seed: model.seed,
                strategy_id: cert.strategy_id.clone(),
                bound: cert.bound,
                exact,
                normalized,
                flops: cert.flops,
                unexplained_dims: cert.unexplained_dims,
                sigma_ratio: model.sigma_ratio,
            },
            TimingRow {
                model_path: model.path.clone(),
                strategy_id: cert.strategy_id,
                wall_seconds: cert.wall_seconds,
            },
        ))
    })
}

/// Path of the wall-time sidecar for a sweep CSV.
pub fn timings_path(out: impl AsRef<Path>) -> PathBuf {
    let mut s = out.as_ref().as_os_str().to_owned();
    s.push(".timings.csv");
    PathBuf::from(s)
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the sweep CSV and its timing sidecar.
pub fn write_sweep(out: impl AsRef<Path>, rows: &[(SweepRow, TimingRow)]) -> Result<()> {
    write_csv(out.as_ref(), rows.iter().map(|(r, _)| r))?;
    write_csv(timings_path(out), rows.iter().map(|(_, t)| t))
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Weight files (`*.maxk`) directly inside `dir`, sorted by path.
pub fn model_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "maxk"))
        .collect();
    out.sort();
    Ok(out)
}
