use gsplan_core::collision::{BatchExecutor, CollisionEval};
use rayon::prelude::*;

/// Environment variable read as the default thread count.
pub const THREADS_ENV: &str = "FOCI_THREADS";

/// Runs batch tasks on a dedicated rayon pool. Results keep task order, and
/// every task reduces its own pairs serially, so output does not depend on
/// the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses one thread per available core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchExecutor for RayonExecutor {
    fn run(
        &self,
        count: usize,
        task: &(dyn Fn(usize) -> gsplan_core::Result<CollisionEval> + Sync),
    ) -> Vec<gsplan_core::Result<CollisionEval>> {
        self.pool.install(|| (0..count).into_par_iter().map(task).collect())
    }
}
