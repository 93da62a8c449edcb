//! Experiment harness behind the `fedqp` command line: configuration,
//! multi-seed runs, parameter sweeps and reports over emitted files.
//!
//! Output layout of a run:
//!
//! ```text
//! <output_dir>/<run-id>/
//!     manifest.toml        resolved config, config hash, run id
//!     metrics-<seed>.csv   one row per round (deterministic columns)
//!     timings-<seed>.csv   wall-clock milliseconds per round
//!     partition-<seed>.txt client index sets
//!     summary.json         final accuracy mean and sample std over seeds
//! ```

mod config;
mod output;
mod runner;

pub use config::{apply_override, load_config, DataSection, ModelSection, PartitionSection, RunConfig};
pub use output::{read_metrics_file, report, write_metrics, MetricsRow, Report};
pub use runner::{
    prepare, run, run_seed, sweep, Prepared, RunSummary, SeedOutcome, SweepAxis, SweepRow, SweepSpec, SweepSummary,
};
