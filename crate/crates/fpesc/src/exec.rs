//! Thread-pool executor.

use anyhow::{Context, Result};
use fpesc_core::exec::Executor;
use rayon::prelude::*;

/// Environment variable capping the worker count (`0` or unset = one per core).
pub const THREADS_VAR: &str = "FPESC_THREADS";

pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    /// `threads = 0` lets rayon pick.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .context("building thread pool")?;
        Ok(Parallel { pool })
    }

    pub fn from_env() -> Result<Self> {
        let threads = match std::env::var(THREADS_VAR) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_VAR} must be a nonnegative integer, got {v:?}"))?,
            _ => 0,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
