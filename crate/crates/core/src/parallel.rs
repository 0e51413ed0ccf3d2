//! Ordered fan-out of independent Monte Carlo work items.
//!
//! With the `parallel` feature (on by default) items run on a rayon pool of
//! the requested size; without it everything runs on the calling thread.
//! Results always come back in index order, so reductions over them are
//! identical for any worker count.

/// Applies `f` to `0..n` and returns the results in index order.
///
/// `workers == 0` uses rayon's default pool; `workers == 1` stays on the
/// calling thread.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    if workers == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let seq: Vec<u64> = (0..1000u64).map(|i| i * i).collect();
        for workers in [0, 1, 2, 3] {
            let out = map_indexed(1000, workers, |i| (i as u64) * (i as u64));
            assert_eq!(out, seq);
        }
    }
}
