//! Experiment plumbing shared by the command-line front end: configuration
//! files, run directories, sweeps, tabular batteries and Q-surface export.

pub mod config;
pub mod qsurface;
pub mod run;
pub mod sweep;
pub mod tables;

pub use config::{apply_setting, parse_config, serialize_config};
pub use qsurface::{local_maxima, q_surface, write_q_surface, QSurfaceGrid, SurfaceKind};
pub use run::{output_root, read_checkpoint, read_metrics, run_training, Checkpoint, RunManifest, RunOutcome};
pub use sweep::{run_sweep, SweepAxis, SweepSpec};
pub use tables::{bound_rows, run_battery, write_battery, write_bound_table, BatterySpec};
