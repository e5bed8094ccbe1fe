//! Order-fixed parallel helpers.
//!
//! Results must be bit-identical regardless of the worker-thread count, so
//! parallel work is always split into chunks whose boundaries depend only on
//! the data size, partial results are collected in index order, and floating
//! reductions run in a fixed pairwise pattern.

use rayon::prelude::*;

/// Fixed sub-batch size for gradient accumulation and per-sample scoring.
/// Chunk boundaries derive from this constant, never from the thread count.
pub const CHUNK: usize = 16;

/// Pairwise (tree) summation. Deterministic for a given slice and more
/// accurate than a running sum for long inputs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Map `0..n` in parallel, returning results in index order.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
