//! Config-driven experiment runner for the damped driven KdV suite.
//!
//! Every subcommand reads one sectioned TOML config, writes its CSV files
//! and a `manifest.toml` into the output directory, and exits with a code
//! from [`exit_code`]. A manifest can be passed back as `--config` to
//! replay the run.

pub mod commands;
pub mod config;
pub mod export;
pub mod manifest;
pub mod selftest;
pub mod sweep;

use thiserror::Error;

pub use commands::{dispatch, run};
pub use config::{parse_config, parse_with_overrides, RunConfig, Subcommand};
pub use export::{export_csv, Cell};
pub use manifest::RunManifest;

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "KDVDA_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] kdvda_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} self-test check(s) failed")]
    SelftestFailed(usize),
}

pub mod codes {
    pub const OK: i32 = 0;
    pub const BLOW_UP: i32 = 1;
    pub const NON_CONVERGENCE: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const SELFTEST: i32 = 5;
}

/// Process exit status for an error.
pub fn exit_code(err: &CliError) -> i32 {
    use kdvda_core::Error as E;
    match err {
        CliError::Core(E::BlowUp { .. }) => codes::BLOW_UP,
        CliError::Core(
            E::NonConvergence { .. } | E::WMapGap { .. } | E::Singular(_) | E::ThetaOutOfRange(_),
        ) => codes::NON_CONVERGENCE,
        CliError::Core(E::Infeasible(_)) => codes::INFEASIBLE,
        CliError::SelftestFailed(_) => codes::SELFTEST,
        _ => codes::CONFIG,
    }
}
