//! Benchmark harness behind the `ksembed` binary.

pub mod dataset;
pub mod report;
pub mod run;
pub mod verify;

pub use dataset::{load_dataset, DataFormat, Dataset, LoadOptions};
pub use report::{emit_report, read_reports, PhaseTimings, RunReport};
pub use run::{run_benchmark, Budget, KernelChoice, Method, RunConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "KSEMBED_THREADS";

/// Sizes the global rayon pool from `KSEMBED_THREADS` if it is set. Returns
/// the thread count in effect.
pub fn configure_threads() -> crate::Result<usize> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let threads: usize = value.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
            crate::Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {value:?}"))
        })?;
        // A pool that is already initialized keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(rayon::current_num_threads())
}
