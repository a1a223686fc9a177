//! Benchmark harness around the `dbss` solvers: dataset generation, single
//! runs, Monte-Carlo sweeps and their CSV/JSON reports.

pub mod commands;
pub mod error;
pub mod report;
pub mod sweep;

pub use error::{CliError, Result};
pub use report::{summarize, write_report, CellSummary, RawRecord};
pub use sweep::{run_sweep, SweepResult, SweepSpec, SweepVariable};
