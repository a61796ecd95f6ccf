//! Replica-parallel execution. Results are always collected in replica
//! order, so output does not depend on scheduling.

use coalesce_core::estimator::{aggregate, run_replica, DensitySeries, Experiment};
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Map `f` over `range` on a pool of `threads` workers (0: one per core),
/// returning results in index order.
pub fn par_map<T, F>(range: std::ops::Range<u64>, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> coalesce_core::Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let out: Vec<coalesce_core::Result<T>> = pool.install(|| range.into_par_iter().map(&f).collect());
    out.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

/// Run replicas `0..n` and aggregate.
pub fn measure_densities_parallel(spec: &Experiment, n: u64, threads: usize) -> Result<DensitySeries> {
    spec.validate()?;
    let reps = par_map(0..n, threads, |r| run_replica(spec, r))?;
    Ok(aggregate(&spec.times, reps)?)
}
