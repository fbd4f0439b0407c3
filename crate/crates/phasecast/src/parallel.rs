//! Work scheduling for the embarrassingly parallel stages.
//!
//! Dataset generation and chunked rollout evaluation both map an
//! independent job over `0..n`. [`run_indexed`] is the single entry point:
//! with the `parallel` feature (default) it fans out over a rayon pool,
//! without it the same call degrades to a sequential loop. Results come
//! back in index order either way, and because every job derives its own
//! RNG stream from the index, the outputs are identical no matter how many
//! workers ran.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(i)` for `i in 0..n` and collects the results in index order.
///
/// `workers == 0` means "use all available cores"; `workers == 1` forces
/// the sequential path even when the `parallel` feature is enabled.
pub fn run_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if workers == 1 {
            return run_sequential(n, f);
        }
        if workers == 0 {
            return (0..n).into_par_iter().map(|i| f(i)).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(|i| f(i)).collect()),
            Err(_) => run_sequential(n, f),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        run_sequential(n, f)
    }
}

/// Sequential reference path. Exists unconditionally so benchmarks can
/// compare it against the parallel path under identical inputs.
pub fn run_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
