//! The JSON envelope around every command's report.
//!
//! Reports carry no timings or paths outside `--out`, so a rerun with the
//! same config, seed and worker count reproduces them byte for byte.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{CliError, CommonArgs, ResolvedGroup};

/// Everything that determines a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub group: ResolvedGroup,
    pub seed: u64,
    pub workers: u32,
    pub params: Value,
}

impl RunConfig {
    pub fn new(command: &str, group: ResolvedGroup, common: &CommonArgs, params: &impl Serialize) -> Result<Self, CliError> {
        Ok(RunConfig {
            command: command.to_string(),
            group,
            seed: common.seed,
            workers: common.workers,
            params: serde_json::to_value(params).map_err(crate::config::config_err)?,
        })
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Serialize)]
pub struct Envelope {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub passed: bool,
    pub warnings: Vec<String>,
    pub report: Value,
}

/// A finished command before it is written out.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub warnings: Vec<String>,
    pub report: Value,
}

impl Outcome {
    pub fn new(passed: bool, report: &impl Serialize) -> Result<Self, CliError> {
        Ok(Outcome { passed, warnings: Vec::new(), report: serde_json::to_value(report).map_err(crate::config::numeric_err)? })
    }

    pub fn warn(mut self, w: impl Into<String>) -> Self {
        self.warnings.push(w.into());
        self
    }
}

pub fn envelope(config: RunConfig, outcome: Outcome) -> Envelope {
    Envelope {
        command: config.command.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config,
        passed: outcome.passed,
        warnings: outcome.warnings,
        report: outcome.report,
    }
}

pub fn render(env: &Envelope) -> String {
    let mut s = serde_json::to_string_pretty(env).expect("report serializes");
    s.push('\n');
    s
}

/// `<out>/<noun>-<verb>.json`.
pub fn report_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{}.json", command.replace(' ', "-")))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
