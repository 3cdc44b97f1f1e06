//! Data-parallel execution helpers.
//!
//! Every hot loop in the crate (bootstrap resamples, Monte-Carlo
//! realizations, per-repository parsing) is expressed as an index-addressed
//! map so that output order, and therefore every downstream artefact, is
//! independent of scheduling. With the `parallel` feature (default) the map
//! runs on rayon; without it, the sequential fallback below is used.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`]; kept unconditionally so benchmarks can
/// compare both paths in a single build.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i * 31 + 7) % 11;
        assert_eq!(map_indexed(100, f), map_indexed_seq(100, f));
    }
}
