//! Thread-pool executor for the multigrid relaxation sweeps.

use layertime_core::exec::Executor;
use rayon::prelude::*;

/// Environment variable capping the solver worker count.
pub const THREADS_ENV: &str = "LAYERTIME_THREADS";

pub struct Threaded {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> anyhow::Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("layertime-{i}"))
            .build()?;
        Ok(Self { pool, workers })
    }

    /// Available parallelism, capped by `LAYERTIME_THREADS` when set.
    pub fn from_env() -> anyhow::Result<Self> {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self::new(worker_cap(std::env::var(THREADS_ENV).ok().as_deref(), available)?)
    }
}

fn worker_cap(var: Option<&str>, available: usize) -> anyhow::Result<usize> {
    match var {
        None => Ok(available),
        Some(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
            if cap == 0 {
                anyhow::bail!("{THREADS_ENV} must be at least 1");
            }
            Ok(cap.min(available))
        }
    }
}

impl Executor for Threaded {
    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        if self.workers == 1 || items.len() < 2 {
            for (i, item) in items.iter_mut().enumerate() {
                f(i, item);
            }
            return;
        }
        self.pool.install(|| {
            items
                .par_iter_mut()
                .with_max_len(1)
                .enumerate()
                .for_each(|(i, item)| f(i, item))
        });
    }

    fn workers(&self) -> usize {
        self.workers
    }
}
