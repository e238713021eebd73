//! Thin switch between rayon and plain iterators.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `0..n` through `f`, preserving order.
#[cfg(feature = "parallel")]
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Consumes `items` through `f(index, item)`, preserving order of the output.
#[cfg(feature = "parallel")]
pub(crate) fn map_items<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    items
        .into_par_iter()
        .enumerate()
        .map(|(i, t)| f(i, t))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_items<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Splits `0..n` into fixed-size chunks, folds each chunk sequentially and
/// combines the chunk results in chunk order. The result does not depend on
/// the number of worker threads, including for floating-point accumulators.
pub(crate) fn chunked_fold<A, I, F, C>(n: usize, chunk: usize, identity: I, fold: F, mut combine: C) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, usize) -> A + Sync + Send,
    C: FnMut(A, A) -> A,
{
    let chunk = chunk.max(1);
    let parts = map_range(n.div_ceil(chunk), |i| {
        (i * chunk..((i + 1) * chunk).min(n)).fold(identity(), &fold)
    });
    parts.into_iter().fold(identity(), &mut combine)
}
