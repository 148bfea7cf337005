//! Execution strategy for embarrassingly parallel batches.
//!
//! Every batch computation in the crate is phrased as an indexed map whose
//! results come back in index order; reductions over them are then ordinary
//! sequential sums, so results do not depend on how the map was scheduled.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// `[f(0), f(1), …, f(n − 1)]`, in index order.
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (**self).map(n, f)
    }
}
