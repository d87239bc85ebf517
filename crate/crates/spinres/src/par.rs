//! Data-parallel helpers with a deterministic reduction order.
//!
//! With the `parallel` feature (on by default) work is distributed over the
//! rayon thread pool; without it the same chunked code runs sequentially.
//! Results are bit-identical either way and independent of thread count:
//! sums are accumulated sequentially within fixed-size chunks and the chunk
//! partials are combined in index order, so no floating-point reassociation
//! depends on scheduling.

use num_complex::Complex64;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const CHUNK: usize = 256;

/// Order-preserving map over a slice.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
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

/// Always-sequential map, kept as the baseline for benchmarks.
pub fn map_collect_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

fn chunk_partials_serial<F: Fn(usize) -> Complex64>(n: usize, f: &F) -> Vec<Complex64> {
    (0..n.div_ceil(CHUNK))
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(n);
            (c * CHUNK..end).map(f).sum()
        })
        .collect()
}

/// Sum of `f(0) + f(1) + ... + f(n-1)` with deterministic ordering.
pub fn sum_complex<F>(n: usize, f: F) -> Complex64
where
    F: Fn(usize) -> Complex64 + Sync + Send,
{
    let partials: Vec<Complex64>;
    #[cfg(feature = "parallel")]
    {
        partials = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let end = ((c + 1) * CHUNK).min(n);
                (c * CHUNK..end).map(&f).sum()
            })
            .collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        partials = chunk_partials_serial(n, &f);
    }
    partials.into_iter().sum()
}

/// Always-sequential counterpart of [`sum_complex`]; same chunking, same
/// result bit for bit.
pub fn sum_complex_serial<F: Fn(usize) -> Complex64>(n: usize, f: F) -> Complex64 {
    chunk_partials_serial(n, &f).into_iter().sum()
}
