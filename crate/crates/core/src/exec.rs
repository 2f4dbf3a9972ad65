//! Execution policy for the data-parallel loops (trials, shifts, ensemble members).
//!
//! Every parallel path collects results in index order and folds them on the
//! calling thread, so output is bit-identical whatever the thread count.

/// Where data-parallel work runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon's current pool. Falls back to sequential when the `parallel`
    /// feature is disabled.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
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

    /// Maps over `0..n` in contiguous chunks and folds each chunk into an
    /// accumulator; chunk accumulators are merged left to right.
    pub fn fold_chunks<A, F, M>(self, n: usize, chunk: usize, init: impl Fn() -> A + Sync + Send, f: F, merge: M) -> A
    where
        A: Send,
        F: Fn(&mut A, usize) + Sync + Send,
        M: Fn(&mut A, A),
    {
        let chunk = chunk.max(1);
        let chunks = n.div_ceil(chunk);
        let partials = self.map(chunks, |c| {
            let mut acc = init();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                f(&mut acc, i);
            }
            acc
        });
        let mut out = init();
        for p in partials {
            merge(&mut out, p);
        }
        out
    }
}
