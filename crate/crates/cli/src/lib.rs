//! Experiment runner for the cooling simulations: configuration, built-in
//! recipes, run execution, manifests and table formats. The `magcool` binary
//! is a thin argument parser over this library.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub mod config;
pub mod manifest;
pub mod recipes;
pub mod run;
pub mod table;

pub use config::RunConfig;
pub use manifest::{Invocation, RunManifest};
pub use run::{Run, RunReport};
pub use table::{Table, TableKind};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MAGCOOL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Sideband,
    Stirap,
    Limits,
}

impl BaselineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Sideband => "sideband",
            BaselineMode::Stirap => "stirap",
            BaselineMode::Limits => "limits",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}, line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: format version {found} is not supported (expected {expected})", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] magcool_core::CoreError),
    #[error(transparent)]
    Sac(#[from] magcool_sac::SacError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
