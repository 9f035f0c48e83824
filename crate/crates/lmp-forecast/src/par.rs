//! Execution-mode plumbing: data-parallel loops with a sequential fallback.
//!
//! All sampling and batch-evaluation loops in this crate are written against
//! [`map_indexed`], which dispatches to rayon when the `parallel` feature is
//! enabled and the caller asks for it, and to a plain sequential loop
//! otherwise. Randomized work derives one RNG stream per index, so parallel
//! and sequential execution produce identical output — the mode only changes
//! wall-clock time, never results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch loops run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Single-threaded, in index order.
    #[default]
    Sequential,
    /// Work-stealing across the rayon pool (falls back to sequential when
    /// the crate is built without the `parallel` feature).
    Parallel,
}

impl ExecMode {
    /// The fastest mode this build supports.
    pub fn best() -> Self {
        #[cfg(feature = "parallel")]
        {
            ExecMode::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_indexed(ExecMode::Sequential, 100, |i| i * i);
        let par = map_indexed(ExecMode::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
    }
}
