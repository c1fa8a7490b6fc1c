//! Run directories and their `manifest.json`.
//!
//! Every file goes through [`RunDir::write`], which writes to a temporary
//! sibling and renames it into place, then records its SHA-256. The manifest
//! itself is not part of the inventory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// One invariant monitor outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorPayload {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: String,
    pub command: String,
    pub version: String,
    pub config: Value,
    pub wall_times: BTreeMap<String, f64>,
    /// Largest mass change against the initial state, when a trajectory
    /// was produced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_value: Option<f64>,
    pub monitors: Vec<Check>,
    pub extra: BTreeMap<String, Value>,
    pub files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorPayload>,
}

impl Manifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            status: "ok".into(),
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            wall_times: BTreeMap::new(),
            mass_drift: None,
            min_value: None,
            monitors: Vec::new(),
            extra: BTreeMap::new(),
            files: Vec::new(),
            error: None,
        }
    }

    /// Records `value <= threshold`.
    pub fn check(&mut self, name: &str, value: f64, threshold: f64) {
        let passed = value <= threshold;
        self.monitors.push(Check { name: name.into(), value, threshold, passed });
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.monitors.iter().filter(|c| !c.passed).collect()
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.wall_times.entry(phase.into()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn fail(&mut self, kind: &str, message: &str) {
        self.status = "failed".into();
        self.error = Some(ErrorPayload { kind: kind.into(), message: message.into() });
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// An output directory that keeps the inventory of what it wrote.
#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, manifest: Manifest) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        let entry = FileEntry { path: rel.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 };
        match self.manifest.files.iter_mut().find(|f| f.path == rel) {
            Some(old) => *old = entry,
            None => self.manifest.files.push(entry),
        }
        Ok(())
    }

    pub fn finish(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST), format!("{text}\n").as_bytes())
    }
}
