//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, work is split over a rayon pool; without it the
//! same closures run on the calling thread. Reductions are over integers or are
//! order-independent, so results match exactly across modes and thread counts.

use crate::error::{Error, Result};

/// Execution mode for the data-parallel kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Maps `f` over `0..n` and collects results in index order.
    pub fn map_collect<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`Exec::map_collect`].
    pub fn try_map_collect<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map_collect(n, f).into_iter().collect()
    }
}

/// Worker count requested through `MAXK_THREADS`, if set and valid.
pub fn env_threads() -> Option<usize> {
    std::env::var("MAXK_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// Runs `f` with at most `threads` workers. `None` falls back to `MAXK_THREADS`,
/// then to the pool default.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = threads.or_else(env_threads);
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    if threads == Some(0) {
        return Err(Error::InvalidConfig("thread count must be positive".into()));
    }
    Ok(f())
}
