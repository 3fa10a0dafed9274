//! Execution seam for the data-parallel loops.
//!
//! Dataset generation, per-sample algorithm comparisons, and candidate sweeps
//! are all embarrassingly parallel across independent work items. Each such
//! loop funnels through [`map_indexed`] / [`try_map_indexed`], which run on
//! rayon when the `parallel` feature is enabled (the default) and as plain
//! sequential loops otherwise. Results always come back in index order, so
//! the two modes produce identical output.

/// How an indexed loop should run. [`ExecMode::Parallel`] silently degrades
/// to sequential when the crate is built without the `parallel` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Applies `f` to `0..n` and collects the results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == ExecMode::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error wins.
pub fn try_map_indexed<T, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if mode == ExecMode::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}
