//! Batch pipeline behind the `endorse` command.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::PipelineError;
