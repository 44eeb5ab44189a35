//! Data-parallel helpers. With the `parallel` feature work is spread over the
//! rayon pool; without it the same chunking runs sequentially. Chunk
//! boundaries and reduction order are fixed, so results are bit-identical in
//! both modes and for any thread count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f` on every element of `items` (possibly concurrently).
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    #[cfg(not(feature = "parallel"))]
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    (0..n).map(f).collect()
}

/// Splits `0..n` into fixed chunks of `chunk` indices, maps each chunk, then
/// folds the partial results left to right.
pub fn map_reduce_chunks<T, M, R>(n: usize, chunk: usize, map: M, mut reduce: R) -> Option<T>
where
    T: Send,
    M: Fn(Range<usize>) -> T + Send + Sync,
    R: FnMut(&mut T, T),
{
    let chunk = chunk.max(1);
    let ranges: Vec<Range<usize>> = (0..n.div_ceil(chunk)).map(|c| c * chunk..((c + 1) * chunk).min(n)).collect();
    let parts = map_indexed(ranges.len(), |i| map(ranges[i].clone()));
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        reduce(&mut acc, p);
    }
    Some(acc)
}

/// Runs `f` with all helpers confined to the calling thread's pool of one.
pub fn single_threaded<T, F>(f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    f()
}

/// True when compiled with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_reduction_order_is_fixed() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let sum = |r: Range<usize>| xs[r].iter().sum::<f64>();
        let a = map_reduce_chunks(xs.len(), 64, sum, |a, b| *a += b).unwrap();
        let mut b = 0.0;
        for c in 0..xs.len().div_ceil(64) {
            b += xs[c * 64..((c + 1) * 64).min(xs.len())].iter().sum::<f64>();
        }
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(map_reduce_chunks(0, 8, |_| 0.0, |_, _| {}).is_none());
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map_indexed(5, |i| i * i), vec![0, 1, 4, 9, 16]);
        let mut v = vec![0usize; 7];
        for_each_mut(&mut v, |i, x| *x = i + 1);
        assert_eq!(v, (1..=7).collect::<Vec<_>>());
    }
}
