//! Experiment harness for the `vpme-core` numerical library: typed TOML plans,
//! deterministic and resumable experiment drivers, self-describing outputs and
//! SVG plots.
//!
//! A run directory holds `summary.json` (embedding the plan), `trials.csv`,
//! experiment-specific CSVs, `series/<trial>.csv`, `plots/*.svg`, a `meta.json`
//! sidecar with timestamps and wall times, and a `.cache/` of finished trials
//! keyed by the plan hash.

pub mod error;
pub mod experiments;
pub mod plan;
pub mod plot;
pub mod stats;
pub mod store;

pub use error::{LabError, Result};
pub use experiments::{run_plan, Outcome, RunOptions};
pub use plan::{ExperimentKind, Plan};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "VPME_THREADS";

/// Regenerates the plots of an existing run directory without recomputation.
pub fn report(dir: &std::path::Path) -> Result<ExperimentKind> {
    let header = store::read_summary_header(dir)?;
    plot::render(header.kind, dir)?;
    Ok(header.kind)
}
