//! Configuration-driven experiments over the `volterra-ldp` library.

pub mod config;
pub mod error;
pub mod run;

pub use error::CliError;
pub use run::{run, Command, Outcome, RunOptions};
