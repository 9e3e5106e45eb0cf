//! File formats, figures, a thread-pool executor and the `mess3` command
//! line on top of `mess3-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod exec;
pub mod formats;
pub mod manifest;
pub mod svg;

pub use error::{LabError, LabResult};
pub use exec::Threads;
