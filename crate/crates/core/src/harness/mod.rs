//! Scenario configs, command entry points, and the files they emit.
//!
//! Every command writes into an output directory and finishes with a JSON
//! manifest listing each emitted file with its SHA-256, the check verdicts,
//! the fitted constants, and deterministic run counters. Identical config
//! and seed give byte-identical output regardless of the thread count.

mod certification;
mod commands;
mod config;
mod scenarios;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::certify::CertifyError;
use crate::dynamics::DynamicsError;
use crate::field::FieldError;
use crate::ot::OtError;

pub use certification::{certify_records, Certification, CertifyOptions, CERTIFICATION_EXTRA_COLUMNS};
pub use commands::{
    ot_distance, report, run_certify, simulate, twin, vanishing_study, OtMethod, OtOutcome, CERTIFY_MANIFEST, MANIFEST,
};
pub use config::{GridConfig, ModelKind, OtConfig, OutputConfig, ScenarioConfig, Tolerances, TwinConfig, VariantConfig};
pub use scenarios::{bundled, bundled_names, bundled_text};

/// Process exit codes of the command-line front end.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const CHECK_FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{origin}{}: {msg}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Config { origin: String, line: Option<usize>, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Dynamics(#[from] DynamicsError),

    #[error(transparent)]
    Certify(#[from] CertifyError),

    #[error(transparent)]
    Field(#[from] FieldError),

    #[error(transparent)]
    Ot(#[from] OtError),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: content hash does not match the manifest")]
    HashMismatch { path: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Exit code for this error.
    pub fn exit_code(&self) -> i32 {
        let numerical = match self {
            HarnessError::Dynamics(e) => e.is_numerical(),
            HarnessError::Certify(CertifyError::Dynamics(e)) => e.is_numerical(),
            HarnessError::Field(FieldError::NonFinite(_) | FieldError::Escaped { .. }) => true,
            HarnessError::NonFinite(_) => true,
            HarnessError::HashMismatch { .. } => return exit::CHECK_FAILURE,
            _ => false,
        };
        if numerical {
            exit::DIVERGENCE
        } else {
            exit::USAGE
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn from_bool(pass: bool) -> Status {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    pub detail: String,
}

impl Verdict {
    pub fn new(check: &str, status: Status, detail: impl Into<String>) -> Self {
        Verdict { check: check.to_string(), status, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: Option<String>,
    /// Echo of the configuration (TOML).
    pub config: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub constants: BTreeMap<String, f64>,
    /// Deterministic run counters (no wall-clock values).
    pub stats: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            scenario: None,
            config: None,
            verdicts: Vec::new(),
            constants: BTreeMap::new(),
            stats: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    /// No verdict failed.
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            exit::PASS
        } else {
            exit::CHECK_FAILURE
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config {
            origin: path.display().to_string(),
            line: Some(e.line()),
            msg: e.to_string(),
        })
    }

    fn to_json(&self) -> Result<String> {
        if let Some((k, v)) = self.constants.iter().find(|(_, v)| !v.is_finite()) {
            return Err(HarnessError::NonFinite(format!("constant {k} = {v}")));
        }
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        Ok(s)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory that tracks what it wrote.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `rel` (creating parent directories) and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    /// Records a file written by other code under this directory.
    pub fn track(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.files.push(FileEntry { path: rel, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.path(rel);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    /// Writes the manifest (listing everything written so far) as `name`.
    pub fn finish(self, mut manifest: Manifest, name: &str) -> Result<Manifest> {
        manifest.files = self.files;
        let text = manifest.to_json()?;
        let path = self.root.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// `{:e}` rendering that rejects NaN and infinities.
pub(crate) fn num(x: f64, what: &str) -> Result<String> {
    if x.is_finite() {
        Ok(format!("{x:e}"))
    } else {
        Err(HarnessError::NonFinite(what.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn exit_codes() {
        let e = HarnessError::Config { origin: "x".into(), line: Some(3), msg: "bad".into() };
        assert_eq!(e.to_string(), "x:3: bad");
        assert_eq!(e.exit_code(), exit::USAGE);
        let d = HarnessError::Dynamics(DynamicsError::Divergence { step: 1, indices: vec![0] });
        assert_eq!(d.exit_code(), exit::DIVERGENCE);
        let mut m = Manifest::new("t");
        assert_eq!(m.exit_code(), exit::PASS);
        m.verdicts.push(Verdict::new("c", Status::Fail, ""));
        assert_eq!(m.exit_code(), exit::CHECK_FAILURE);
    }
}
