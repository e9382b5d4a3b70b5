//! Data-parallel helpers.
//!
//! Work is only ever split over independent outputs (coil planes, frames,
//! pixel blocks); reductions run in a fixed sequential order. Parallel and
//! serial execution therefore produce bit-identical results. Without the
//! `parallel` feature every helper runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f` with all helpers in this module forced onto a single thread.
#[cfg(feature = "parallel")]
pub fn serial<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("failed to build single-thread pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn serial<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Calls `f(index, chunk)` for every `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Like [`for_each_chunk`] with per-worker scratch state built by `init`.
pub fn for_each_chunk_init<T, S, I, F>(data: &mut [T], chunk_len: usize, init: I, f: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each_init(&init, |s, (i, c)| f(s, i, c));
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(&mut s, i, c));
    }
}

/// Calls `f(index, item)` for every item, consuming the vector.
pub fn for_each_item<T, F>(items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(usize, T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    items.into_par_iter().enumerate().for_each(|(i, x)| f(i, x));
    #[cfg(not(feature = "parallel"))]
    items.into_iter().enumerate().for_each(|(i, x)| f(i, x));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
