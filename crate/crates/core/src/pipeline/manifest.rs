//! Run manifest with artifact hashes, plus the output-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::file_hash;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "sbdo-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".sbdo.lock";

/// Stages in pipeline order.
pub const STAGES: [&str; 5] = ["sample", "fit", "threshold", "optimize", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Relative artifact path to SHA-256 hex.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_ms: u64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash,
            stages: BTreeMap::new(),
        }
    }

    /// Load the manifest of `dir`, or start a fresh one.
    pub fn load_or_new(dir: &Path, seed: u64, config_hash: String) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(seed, config_hash));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("{} is not a version {MANIFEST_VERSION} manifest", path.display())));
        }
        m.seed = seed;
        m.config_hash = config_hash;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Hash recorded for `artifact` by the completed stage `stage`.
    pub fn recorded(&self, stage: &str, artifact: &str) -> Result<&str> {
        let rec = self
            .stages
            .get(stage)
            .filter(|r| r.status == StageStatus::Completed)
            .ok_or_else(|| Error::Config(format!("stage `{stage}` has not completed; run it first")))?;
        rec.outputs.get(artifact).map(String::as_str).ok_or_else(|| {
            Error::Config(format!("stage `{stage}` did not produce `{artifact}`"))
        })
    }

    /// Verify that `artifact` on disk still matches what `stage` wrote; return its hash.
    pub fn verify(&self, dir: &Path, stage: &str, artifact: &str) -> Result<String> {
        let expected = self.recorded(stage, artifact)?.to_string();
        let path = dir.join(artifact);
        let found = file_hash(&path)?;
        if found != expected {
            return Err(Error::StaleArtifact { path, expected, found });
        }
        Ok(found)
    }

    pub fn record(&mut self, stage: &str, rec: StageRecord) {
        self.stages.insert(stage.to_string(), rec);
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
