use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats::write_json;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: PathBuf) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self { path: shown_as, sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub convexify: String,
    pub convexify_core: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self { convexify: env!("CARGO_PKG_VERSION").into(), convexify_core: convexify_core::VERSION.into() }
    }
}

/// What a command read, what it wrote and how, enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub versions: Versions,
    pub wall_seconds: f64,
    /// Seconds since the Unix epoch when the command finished.
    pub finished_at: f64,
}

/// Collects input digests while a command runs, then writes the manifest.
pub struct ManifestBuilder {
    command: String,
    args: Vec<String>,
    started: Instant,
    inputs: Vec<FileDigest>,
}

impl ManifestBuilder {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self { command: command.into(), args, started: Instant::now(), inputs: Vec::new() }
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path, path.to_path_buf())?);
        Ok(())
    }

    /// Hashes `outputs` (which must live in `dir`) and writes `dir/manifest.json`.
    pub fn finish(&self, dir: &Path, config: &RunConfig, outputs: &[PathBuf]) -> Result<Manifest> {
        let outputs = outputs
            .iter()
            .map(|p| FileDigest::of(p, p.strip_prefix(dir).unwrap_or(p).to_path_buf()))
            .collect::<Result<Vec<_>>>()?;
        let finished_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let m = Manifest {
            command: self.command.clone(),
            args: self.args.clone(),
            config: config.clone(),
            inputs: self.inputs.clone(),
            outputs,
            versions: Versions::default(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            finished_at,
        };
        write_json(&dir.join(MANIFEST), &m)?;
        Ok(m)
    }
}
