//! Tiny execution-policy shim: `map_collect` fans work out over rayon when the
//! `parallel` feature is on and degrades to a plain sequential loop otherwise.
//! Every data-parallel loop in the crate goes through here so the two builds
//! stay behaviorally identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// True when this build fans `map_collect` out over a thread pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
