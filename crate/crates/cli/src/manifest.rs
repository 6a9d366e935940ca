//! Per-run manifests.
//!
//! A manifest records everything needed to repeat a run: the invocation, the
//! full configuration, the resolved environment, the seed and the code
//! version, plus a SHA-256 digest of every file the run wrote. Timestamps are
//! kept out of the content hash, so repeating a run reproduces the hash.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use magcool_core::EnvConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{CliError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Baseline,
    Train,
    Evaluate,
    Export,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Baseline => "baseline",
            CommandKind::Train => "train",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Export => "export",
        }
    }
}

/// What was asked for, beyond the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default)]
    pub force: bool,
}

impl Invocation {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            mode: None,
            recipe: None,
            teacher: None,
            checkpoint: None,
            inputs: Vec::new(),
            format: None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Directory name of the run under the output root.
    pub run_name: String,
    pub invocation: Invocation,
    pub config: RunConfig,
    pub env: EnvConfig,
    pub seed: u64,
    pub code_version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub outputs: Vec<OutputFile>,
    /// Free-form diagnostics, e.g. why training halted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub content_hash: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(run_name: String, invocation: Invocation, config: RunConfig, env: EnvConfig, seed: u64) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            run_name,
            invocation,
            config,
            env,
            seed,
            code_version: CODE_VERSION.to_string(),
            started_unix_s: unix_now(),
            finished_unix_s: 0,
            outputs: Vec::new(),
            notes: Vec::new(),
            content_hash: String::new(),
        }
    }

    /// Records a file already written under `run_dir`.
    pub fn add_output(&mut self, run_dir: &Path, relative: &Path) -> Result<()> {
        let full = run_dir.join(relative);
        let bytes = std::fs::read(&full).map_err(|e| CliError::io(&full, e))?;
        self.outputs.push(OutputFile {
            path: relative.to_path_buf(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Digest over the invocation, configuration, seed, code version and
    /// output digests, in that order.
    pub fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |label: &str, v: &[u8]| {
            h.update(label.as_bytes());
            h.update((v.len() as u64).to_le_bytes());
            h.update(v);
        };
        feed("invocation", &serde_json::to_vec(&self.invocation).expect("serialisable"));
        feed("config", &serde_json::to_vec(&self.config).expect("serialisable"));
        feed("env", &serde_json::to_vec(&self.env).expect("serialisable"));
        feed("seed", &self.seed.to_le_bytes());
        feed("code", self.code_version.as_bytes());
        for o in &self.outputs {
            feed("output", format!("{} {}", o.path.display(), o.sha256).as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn finish(&mut self) {
        self.finished_unix_s = unix_now();
        self.content_hash = self.compute_hash();
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != MANIFEST_VERSION {
            return Err(CliError::Version {
                path: path.to_path_buf(),
                found,
                expected: MANIFEST_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Re-hashes every listed output and reports the first mismatch.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for o in &self.outputs {
            let full = run_dir.join(&o.path);
            let bytes = std::fs::read(&full).map_err(|e| CliError::io(&full, e))?;
            if sha256_hex(&bytes) != o.sha256 {
                return Err(CliError::Invalid(format!("{} does not match its manifest digest", full.display())));
            }
        }
        if self.compute_hash() != self.content_hash {
            return Err(CliError::Invalid("manifest content hash does not match its fields".into()));
        }
        Ok(())
    }
}
