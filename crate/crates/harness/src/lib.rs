//! Experiment harness: plant files, presets, verification suite and
//! artifact output for `backstep-core`.

pub mod error;
pub mod kernels;
pub mod output;
pub mod plant;
pub mod presets;
pub mod verify;

pub use error::{HarnessError, Result};
pub use presets::{run_preset, ExperimentConfig, Outcome, Preset};
