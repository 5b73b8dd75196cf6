//! Ordered data-parallel helpers.
//!
//! With the `parallel` feature these run on the rayon pool, otherwise they
//! fall back to plain iterators. Results are always collected in index order,
//! and reductions over chunks are summed sequentially in chunk order, so the
//! output is bit-identical whichever path is compiled in and however many
//! threads the pool has.

/// Row block size for chunked reductions. Fixed so that summation order does
/// not depend on the thread count.
pub const CHUNK: usize = 64;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Splits `0..n` into `CHUNK`-sized ranges and maps each range.
pub fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    map_range(n_chunks, |c| {
        let start = c * CHUNK;
        f(start..(start + CHUNK).min(n))
    })
}
