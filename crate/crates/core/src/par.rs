//! Data-parallel helpers with a sequential fallback.
//!
//! Every hot loop in the crate (tile rasterisation, per-splat gradient
//! assembly, per-pixel uncertainty scoring, per-view inpainting) goes through
//! these helpers. Results are always collected in index order, so output does
//! not depend on the number of workers.

/// Execution policy for the data-parallel loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Applies `f` to every element of `items` mutably, possibly in parallel.
pub fn for_each_mut<T, F>(exec: Exec, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        }
        _ => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
    }
}

/// `(0..n).map(f).collect()` with at most `limit` jobs in flight.
///
/// Used for calls into rate-limited services; falls back to a plain loop
/// when parallelism is disabled or `limit <= 1`.
pub fn map_range_limited<T, F>(exec: Exec, n: usize, limit: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && limit > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = (exec, limit);
    (0..n).map(f).collect()
}
