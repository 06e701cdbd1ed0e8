//! Command-line surface: scenario simulation, single runs, replicated
//! benchmarks, and order-curve sweeps.

pub mod bench;
pub mod config;
pub mod order_curve;
pub mod run;
pub mod simulate;

pub use bench::{cmd_bench, BenchConfig, BenchOutcome, BenchSource, Method};
pub use order_curve::{cmd_order_curve, OrderCurveConfig, OrderCurveOutcome};
pub use run::{cmd_run, Mode, RunConfig, RunReport};
pub use simulate::{cmd_simulate, SimulateConfig};

use crate::error::{Error, Result};

/// Run `f` on a dedicated rayon pool with the requested worker count;
/// 0 keeps the default pool. Replication outputs are reduced in index
/// order, so results do not depend on the worker count.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("could not build a {threads}-thread pool: {e}")))?;
    Ok(pool.install(f))
}
