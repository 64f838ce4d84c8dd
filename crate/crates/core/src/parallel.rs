use rayon::prelude::*;

use crate::error::{BpreError, Result};

/// Workers to use when the caller does not say.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Evaluates `job(i)` for `i in 0..count` on `workers` threads and returns the
/// results in index order.
pub fn ordered_map<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if workers == 0 {
        return Err(BpreError::Precondition("workers must be at least 1".into()));
    }
    if workers == 1 {
        return Ok((0..count).map(job).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| BpreError::Precondition(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(job).collect()))
}

/// Like [`ordered_map`] for fallible jobs; the first error in index order wins.
pub fn try_ordered_map<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    ordered_map(count, workers, job)?.into_iter().collect()
}
