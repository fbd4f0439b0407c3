//! Optimization: Adam, gradient clipping, plateau scheduling, window
//! sampling, the fit loop, and grid sweeps.

mod adam;
mod fit;
mod schedule;
mod search;
mod windows;

pub use adam::{clip_global_l2, Adam, AdamConfig};
pub use fit::{config_hash, fit, EpochRecord, FitOutcome, RunRecord, StopReason, TrainConfig};
pub use schedule::{improves, Plateau, PlateauConfig, REL_THRESHOLD};
pub use search::{enumerate_grid, run_grid, GridRun, GridSpec, GridSummary};
pub use windows::{sample_windows, WindowBatch};
