use std::sync::Arc;

use anyhow::Result;
use mavcap_core::ppo::Executor;
use rayon::prelude::*;
use rayon::ThreadPool;

/// Runs jobs on a dedicated rayon pool; results keep input order.
#[derive(Debug, Clone)]
pub struct RayonExecutor {
    pool: Arc<ThreadPool>,
}

impl RayonExecutor {
    /// `threads == 0` uses every available core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool: Arc::new(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync,
    {
        let f = &f;
        self.pool.install(|| items.par_iter_mut().map(f).collect())
    }
}
