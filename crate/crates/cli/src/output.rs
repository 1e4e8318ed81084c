//! Errors, exit codes, and the provenance header shared by every output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL: &str = "frb";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] frb_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for capacity limits, 4 for non-convergence.
    pub fn exit_code(&self) -> i32 {
        use frb_core::Error as E;
        match self {
            CliError::Core(E::Capacity(_)) => 3,
            CliError::Core(E::NonConvergence { .. } | E::Numerical(_)) => 4,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

pub fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Writes to `path`, or to stdout when it is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

/// SHA-256 of the canonical JSON form of `value` (object keys sorted).
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("configuration serializes").to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Meta {
    pub fn new(config_hash: String) -> Self {
        Meta { tool: TOOL, version: VERSION, config_hash }
    }

    /// `#`-prefixed header lines for CSV files.
    pub fn csv_header(&self) -> String {
        format!("# {} {}\n# config_hash {}\n", self.tool, self.version, self.config_hash)
    }
}

/// A JSON document with the provenance fields first.
#[derive(Serialize)]
pub struct Report<T: Serialize> {
    #[serde(flatten)]
    pub meta: Meta,
    #[serde(flatten)]
    pub body: T,
}

pub fn json_bytes<T: Serialize>(meta: Meta, body: T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&Report { meta, body }).map_err(|e| input(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}
