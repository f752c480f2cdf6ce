use dgfed_core::fed_sim::ClientExecutor;
use rayon::prelude::*;

/// Runs per-client work on the rayon pool; results stay in client order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl ClientExecutor for Parallel {
    fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).into_par_iter().map(f).collect()
    }
}
