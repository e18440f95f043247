//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers here run on rayon. With
//! the feature disabled every helper degrades to a plain sequential loop and
//! [`Parallelism::Threads`] behaves like [`Parallelism::Sequential`].
//!
//! All helpers return results in input order, so aggregation downstream is
//! independent of scheduling.

use serde::{Deserialize, Serialize};

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parallelism {
    Sequential,
    /// Use a dedicated pool with this many worker threads.
    Threads(usize),
    /// Use the global rayon pool.
    #[default]
    Global,
}


impl Parallelism {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(workers)
        }
    }

    /// Whether this build can actually run loops in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            match self {
                Parallelism::Sequential => {}
                Parallelism::Global => {
                    return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
                }
                Parallelism::Threads(n) => {
                    match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                        Ok(pool) => {
                            return pool.install(|| {
                                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
                            });
                        }
                        Err(err) => {
                            log::warn!("thread pool unavailable ({err}); running sequentially");
                        }
                    }
                }
            }
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let idx: Vec<usize> = (0..n).collect();
        self.map(&idx, |_, &i| f(i))
    }
}
