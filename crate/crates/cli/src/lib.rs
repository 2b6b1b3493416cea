//! Library side of the `procalloc` binary, so commands can be driven from tests.

mod args;
mod commands;
mod manifest;
pub mod stats;

pub use args::{Cli, Command, CommonArgs, CompareArgs, EvalArgs, TrainArgs};
pub use commands::{
    cmd_compare, cmd_eval, cmd_train, run, CompareReport, EvalReport, TrainReport, TrainedRun,
};
pub use manifest::{git_blob_sha256, RunManifest, MANIFEST_FILE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or invalid inputs, incompatible checkpoints.
    #[error("{0}")]
    Input(String),
    /// A training run produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Diverged(_) => 2,
        }
    }
}
