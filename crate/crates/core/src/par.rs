//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the rayon global pool unless
//! sequential execution was requested at runtime via [`set_sequential`].
//! Results are always returned in input order, so reductions performed by the
//! caller are deterministic regardless of the execution strategy.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force sequential execution even when the `parallel` feature is enabled.
pub fn set_sequential(sequential: bool) {
    SEQUENTIAL.store(sequential, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Use `workers` threads; `1` selects the sequential path.
///
/// The rayon global pool can only be sized once per process, so later calls
/// with a different count keep the first size and only toggle sequential mode.
pub fn configure(workers: usize) {
    set_sequential(workers <= 1);
    #[cfg(feature = "parallel")]
    if workers > 1 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}
