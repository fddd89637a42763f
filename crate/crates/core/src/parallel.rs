//! Worker-pool helper. Results never depend on the worker count: every parallel
//! stage in this crate collects in input order.

use crate::error::{Error, Result};

/// Runs `f` inside a dedicated rayon pool with `workers` threads (0 means rayon's default).
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}
