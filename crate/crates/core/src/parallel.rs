//! Index-ordered parallel map on a dedicated thread pool.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Evaluates `f(0), ..., f(count - 1)` on `threads` workers and returns the
/// results in index order.
pub fn map_indexed<T, F>(threads: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if threads <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}
