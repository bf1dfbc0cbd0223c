use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written once into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    /// Command-specific facts (counts, metrics).
    pub summary: serde_json::Value,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs and artifacts while a command runs.
pub struct Recorder {
    command: String,
    out: PathBuf,
    started: Instant,
    inputs: Vec<FileDigest>,
    artifacts: Vec<FileDigest>,
}

impl Recorder {
    pub fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command: command.to_string(),
            out: out.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Records an input that is not a file, such as bundled data.
    pub fn input_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_bytes(bytes),
        });
    }

    /// Writes `bytes` to `name` under the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_bytes(bytes),
        });
        Ok(path)
    }

    pub fn finish(self, seed: u64, config: serde_json::Value, summary: serde_json::Value) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            config,
            inputs: self.inputs,
            artifacts: self.artifacts,
            summary,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(m)
    }
}
