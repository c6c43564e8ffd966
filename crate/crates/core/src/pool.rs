//! Scoped worker pools for the parallel samplers.

use crate::error::{Error, Result};

/// Run `f` on a dedicated pool of `threads` workers, or on rayon's global
/// pool when `threads == 0`.
pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(f)
}
