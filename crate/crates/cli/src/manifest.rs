//! Run manifests written beside every command's outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub git_describe: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Output path -> SHA-256 of its bytes.
    pub outputs: Vec<(String, String)>,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn file_sha256(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    command: String,
    config_path: Option<PathBuf>,
    config_hash: String,
    seed: u64,
    started: f64,
}

impl ManifestBuilder {
    pub fn start(command: &str, config_path: Option<&Path>, config_hash: String, seed: u64) -> Self {
        Self { command: command.into(), config_path: config_path.map(Path::to_path_buf), config_hash, seed, started: now() }
    }

    /// Hash `outputs` and write `<dir>/<command>.manifest.json`.
    pub fn finish(self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf, Failure> {
        let outputs = outputs
            .iter()
            .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
            .collect::<Result<Vec<_>, Failure>>()?;
        let m = RunManifest {
            command: self.command.clone(),
            config_path: self.config_path.map(|p| p.display().to_string()),
            config_hash: self.config_hash,
            seed: self.seed,
            git_describe: git_describe(),
            started_unix_s: self.started,
            finished_unix_s: now(),
            outputs,
        };
        let path = dir.join(format!("{}.manifest.json", self.command));
        crate::write_json(&path, &m)?;
        Ok(path)
    }
}
