//! Library half of the batch CLI: configuration, dataset files, sweep
//! orchestration and report emission. The binary in `main.rs` is a thin
//! argument parser over these modules, which keeps every input surface
//! reachable from tests and fuzz targets.

pub mod config;
pub mod dataset;
pub mod report;
pub mod runner;
pub mod theory;

pub use config::RunConfig;
pub use dataset::{read_dataset, write_dataset};
pub use report::{read_sweep_csv, write_sweep_csv, SweepRow};
