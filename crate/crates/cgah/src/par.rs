//! Thin indirection over rayon so every data-parallel loop in the crate has a
//! sequential fallback when the `parallel` feature is disabled.
//!
//! Results are always collected or combined in index order, so output is
//! bitwise identical across thread counts and across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n` and collect the results in index order.
pub(crate) fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Apply `f` to disjoint `chunk`-sized slices of `data`, passing the chunk index.
///
/// Chunk boundaries are fixed by `chunk`, not by the scheduler, so writes are
/// deterministic regardless of how chunks are assigned to threads.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Sum `f(i)` over `0..n` with a fixed reduction order.
///
/// Partials are materialized per index and folded sequentially; the result
/// does not depend on thread scheduling.
pub(crate) fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_collect(n, f).iter().sum()
}
