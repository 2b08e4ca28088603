//! Thin parallel/sequential switch.
//!
//! With the `parallel` feature on, loops over independent output slots run on
//! the rayon pool; otherwise they run in order on the calling thread. Each
//! slot is computed sequentially either way, so results do not depend on the
//! worker count. Loops with little total work always stay on the calling
//! thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many element visits a loop is not worth dispatching.
pub const MIN_PARALLEL_WORK: usize = 1 << 15;

/// Computes `f(i)` for `i in 0..len` and collects the results in order.
/// `work` estimates the total number of element visits.
pub fn map_range<T, F>(len: usize, work: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if work >= MIN_PARALLEL_WORK && len > 1 {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..len).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive mutable chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if data.len() >= MIN_PARALLEL_WORK && data.len() > chunk {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Number of worker threads reductions may use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
