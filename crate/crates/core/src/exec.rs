//! Row-partitioned execution of pixelwise maps.
//!
//! Only maps that write each output row independently go through here;
//! reductions always run serially in a fixed order, so results do not depend
//! on the worker count.

use crate::error::{Error, Result};

pub struct Exec {
    pool: Option<rayon::ThreadPool>,
}

impl Exec {
    pub fn serial() -> Self {
        Self { pool: None }
    }

    /// `threads <= 1` runs everything on the calling thread.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// Calls `f(row, out_row)` for every row of `out`.
    pub fn rows<F>(&self, out: &mut [f64], width: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        match &self.pool {
            None => out.chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row)),
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| {
                    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row))
                })
            }
        }
    }
}

impl Default for Exec {
    fn default() -> Self {
        Self::serial()
    }
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("threads", &self.threads()).finish()
    }
}
