//! Execution policy for the data-parallel kernels.
//!
//! With the `parallel` feature (default) the per-sample and per-plane loops
//! run on the rayon pool. Every parallel loop writes disjoint output chunks
//! and every reduction is folded in index order afterwards, so results are
//! bit-identical to the sequential path. [`set_parallel`] switches policy at
//! runtime, which is what the benches use to compare the two.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
static PARALLEL: AtomicBool = AtomicBool::new(true);

// Below this many scalar operations per call the sequential loop wins.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 16 * 1024;

/// Enables or disables the rayon path. A no-op without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

/// Whether kernels currently dispatch to rayon.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Calls `f(i, chunk)` for every `chunk_len`-sized chunk of `out`.
/// `work` is a rough operation count used to skip parallelism on tiny inputs.
pub(crate) fn for_each_chunk<T, F>(out: &mut [T], chunk_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() && work >= MIN_PARALLEL_WORK && out.len() > chunk_len {
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = work;
    out.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Evaluates `f` on `0..count`, returning results in index order.
pub(crate) fn map_range<R, F>(count: usize, work: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && work >= MIN_PARALLEL_WORK && count > 1 {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..count).map(f).collect()
}
