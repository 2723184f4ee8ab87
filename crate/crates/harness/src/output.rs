//! CSV outputs with sidecar metadata, the run manifest, and a loader that
//! only accepts files the manifest vouches for.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const ERROR_RECORD: &str = "error.json";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "CELLFLOW_OUT";

/// The output root: `$CELLFLOW_OUT`, else `./cellflow-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cellflow-out"))
}

/// `dir` itself when absolute, else `root/dir`.
pub fn resolve_dir(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub kind: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub kind: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            file: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn entry(&self, file: &str) -> Option<&OutputEntry> {
        self.outputs.iter().find(|o| o.file == file)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sidecar_name(file: &str) -> String {
    format!("{file}.meta.json")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Collects the outputs of one run.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    config_hash: String,
    kind: String,
    started: u64,
    outputs: Vec<OutputEntry>,
}

impl RunWriter {
    /// Create `dir` and store a copy of the configuration in it.
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        Self::create_with(dir, cfg.kind.as_str(), cfg.hash(), &cfg.to_toml())
    }

    /// Create `dir` for a run described by `config_text` with hash `config_hash`.
    pub fn create_with(dir: &Path, kind: &str, config_hash: String, config_text: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        write_file(&dir.join(CONFIG_COPY), config_text.as_bytes())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            kind: kind.to_string(),
            started: now(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Write `rows` as `name` with a one-line header, plus its sidecar.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| HarnessError::io(&path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::io(&path, e))?;
        write_file(&path, &bytes)?;
        let sidecar = Sidecar {
            config_hash: self.config_hash.clone(),
            kind: self.kind.clone(),
            file: name.to_string(),
            rows: rows.len(),
        };
        let meta = serde_json::to_vec_pretty(&sidecar).expect("sidecar serialises");
        write_file(&self.dir.join(sidecar_name(name)), &meta)?;
        self.outputs.retain(|o| o.file != name);
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
            rows: rows.len(),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let m = RunManifest {
            config_hash: self.config_hash,
            code_version: CODE_VERSION.to_string(),
            kind: self.kind,
            started: self.started,
            finished: now(),
            outputs: self.outputs,
        };
        let bytes = serde_json::to_vec_pretty(&m).expect("manifest serialises");
        write_file(&self.dir.join(MANIFEST), &bytes)?;
        Ok(m)
    }
}

/// Read `name` from a finished run. The file must be listed in the
/// manifest with a matching checksum, and its sidecar must carry the
/// manifest's configuration hash.
pub fn load_csv<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let manifest = RunManifest::load(dir)?;
    let orphan = |reason: &str| HarnessError::Orphan {
        file: name.to_string(),
        reason: reason.to_string(),
    };
    let entry = manifest.entry(name).ok_or_else(|| orphan("not listed in the manifest"))?;
    let side_path = dir.join(sidecar_name(name));
    let side_text = fs::read_to_string(&side_path).map_err(|_| orphan("missing sidecar"))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| HarnessError::Format {
        file: side_path.display().to_string(),
        message: e.to_string(),
    })?;
    if side.config_hash != manifest.config_hash {
        return Err(orphan("sidecar configuration hash differs from the manifest"));
    }
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(orphan("checksum differs from the manifest"));
    }
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Format {
            file: path.display().to_string(),
            message: e.to_string(),
        })
}

/// CSV files in `dir` that the manifest does not list.
pub fn orphan_files(dir: &Path) -> Result<Vec<String>> {
    let manifest = RunManifest::load(dir)?;
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
        let e = e.map_err(|e| HarnessError::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") && manifest.entry(&name).is_none() {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

/// Best-effort write of an error record next to the outputs.
pub fn write_error_record(dir: &Path, err: &HarnessError) {
    if fs::create_dir_all(dir).is_ok() {
        if let Ok(bytes) = serde_json::to_vec_pretty(&err.record()) {
            let _ = fs::write(dir.join(ERROR_RECORD), bytes);
        }
    }
}
