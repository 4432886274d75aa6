use rayon::prelude::*;
use tscore::snapshot::MatrixExec;

/// Matrix origins fanned out over a rayon pool; `threads = 0` uses the
/// global pool.
pub struct RayonExec {
    pool: Option<rayon::ThreadPool>,
}

impl RayonExec {
    pub fn new(threads: usize) -> RayonExec {
        let pool = (threads > 0).then(|| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
        });
        RayonExec { pool }
    }
}

impl Default for RayonExec {
    fn default() -> Self {
        RayonExec::new(0)
    }
}

impl MatrixExec for RayonExec {
    fn map_origins(&self, n: usize, f: &(dyn Fn(usize) -> Vec<u32> + Sync)) -> Vec<Vec<u32>> {
        let run = || (0..n).into_par_iter().map(f).collect();
        match &self.pool {
            Some(p) => p.install(run),
            None => run(),
        }
    }
}
