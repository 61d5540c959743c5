//! Library side of the `spr` binary: configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_grid, cmd_inspect, cmd_relax, cmd_train, load_data};
pub use config::Config;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_ORDERING: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] spr_core::Error),

    #[error("relaxation ordering violated on {0} instance(s)")]
    Ordering(usize),

    #[error("every grid cell failed")]
    GridFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(spr_core::Error::Divergence { .. }) => EXIT_DIVERGED,
            Self::Core(spr_core::Error::DegeneratePruning | spr_core::Error::DegenerateReference(_)) => EXIT_DEGENERATE,
            Self::Ordering(_) => EXIT_ORDERING,
            _ => EXIT_CONFIG,
        }
    }
}
