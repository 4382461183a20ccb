//! Execution helpers behind the `parallel` feature.
//!
//! Batch evaluations map over immutable inputs and collect results in input
//! order, so the parallel and sequential paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sizes the global worker pool. Returns `false` when a pool was already
/// installed or the crate was built without the `parallel` feature.
pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Order-preserving map, parallel when the feature is enabled.
pub(crate) fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential variant, kept callable for benchmarks and for callers
/// that want single-threaded evaluation regardless of features.
pub(crate) fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
