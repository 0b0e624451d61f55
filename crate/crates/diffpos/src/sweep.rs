//! Order-preserving parallel map used by the grid sweeps.
//!
//! With the `parallel` feature (default) the work runs on rayon; without it
//! the same call is a plain sequential map. Either way results come back in
//! input order, so reductions (worst margin, first witness) are deterministic.
//!
//! [`set_sequential`] forces the sequential path at runtime even when the
//! feature is compiled in. The benchmark suite uses it to compare both paths
//! in one process; the CLI exposes it as `--sequential`.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all sweeps onto the sequential path (no-op without the `parallel` feature).
pub fn set_sequential(sequential: bool) {
    FORCE_SEQUENTIAL.store(sequential, Ordering::Relaxed);
}

/// True when sweeps will run sequentially in this build/configuration.
pub fn is_sequential() -> bool {
    cfg!(not(feature = "parallel")) || FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    if FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Map over indices 0..n, collecting in index order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_collect(&idx, |&i| f(i))
}
