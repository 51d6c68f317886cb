//! Data-parallel batch helpers.
//!
//! Batch evaluation, channel Monte Carlo and sweep trials are all
//! embarrassingly parallel over independent items. `batch_map` fans out via
//! rayon when the `parallel` feature is enabled and falls back to the
//! sequential path otherwise. Results are collected in index order, so both
//! paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential reference path, always available (used by the benches).
pub fn batch_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    items.iter().map(&f).collect()
}

/// Map over independent items, in parallel when the feature allows.
#[cfg(feature = "parallel")]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    items.par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    batch_map_seq(items, f)
}

/// Map over a range of indices.
pub fn index_map<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    let idx: Vec<usize> = (0..n).collect();
    batch_map(&idx, |&i| f(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = batch_map(&xs, |&x| x * x + 1);
        let b = batch_map_seq(&xs, |&x| x * x + 1);
        assert_eq!(a, b);
    }
}
