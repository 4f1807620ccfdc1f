use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::write_json;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fails with the subcommand that produces `path` when it is absent.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    /// Workspace-relative path.
    pub path: String,
    pub sha256: String,
}

/// What one subcommand read and wrote. Inputs and outputs carry content
/// hashes, so records chain into a DAG over artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub threads: usize,
    pub inputs: Vec<ArtifactHash>,
    pub outputs: Vec<ArtifactHash>,
    pub wall_time_s: f64,
}

/// Collects the files a subcommand touches and writes its record.
pub struct Recorder {
    workspace: PathBuf,
    subcommand: String,
    seed: u64,
    config_sha256: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Recorder {
    pub fn start(workspace: &Path, subcommand: &str, seed: u64, config_json: &[u8]) -> Self {
        log::info!("{subcommand}: started");
        Self {
            workspace: workspace.to_path_buf(),
            subcommand: subcommand.to_string(),
            seed,
            config_sha256: sha256_bytes(config_json),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    /// Collects paths for merging into another recorder; never written.
    pub(crate) fn detached(workspace: &Path) -> Self {
        Self {
            workspace: workspace.to_path_buf(),
            subcommand: String::new(),
            seed: 0,
            config_sha256: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub(crate) fn into_paths(self) -> (Vec<PathBuf>, Vec<PathBuf>) {
        (self.inputs, self.outputs)
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<Vec<ArtifactHash>> {
        let mut out: Vec<ArtifactHash> = paths
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(&self.workspace).unwrap_or(p);
                Ok(ArtifactHash {
                    path: rel.to_string_lossy().into_owned(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        out.sort_by(|a, b| a.path.cmp(&b.path));
        out.dedup_by(|a, b| a.path == b.path);
        Ok(out)
    }

    /// Hashes every registered file and writes `records/<subcommand>.json`.
    pub fn finish(self) -> Result<RunRecord> {
        let record = RunRecord {
            subcommand: self.subcommand.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_sha256: self.config_sha256.clone(),
            threads: rayon::current_num_threads(),
            inputs: self.hashes(&self.inputs)?,
            outputs: self.hashes(&self.outputs)?,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        let dir = self.workspace.join("records");
        fs::create_dir_all(&dir)?;
        write_json(dir.join(format!("{}.json", self.subcommand)), &record)?;
        log::info!("{}: done in {:.1} s", record.subcommand, record.wall_time_s);
        Ok(record)
    }
}
