//! File formats, parallel pair stage, cached pipeline and CLI support for
//! [`methnet_core`].

pub mod artifacts;
pub mod binfmt;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod parallel;
pub mod pipeline;
pub mod simulate;

pub use config::{MethylationInputs, RunConfig};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, Pipeline, Slice, StageReport, StageStatus, STAGES};
