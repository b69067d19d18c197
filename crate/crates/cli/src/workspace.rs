//! Output directory handling: artifact writes, prerequisite lookups and the per-run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// SHA-256 of every artifact written, keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The configured output directory for one subcommand run.
pub struct Workspace {
    root: PathBuf,
    command: String,
    started: u128,
    artifacts: BTreeMap<String, String>,
}

impl Workspace {
    pub fn open(cfg: &PipelineConfig, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
        Ok(Self {
            root: cfg.output_dir.clone(),
            command: command.to_string(),
            started: now_ms(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    /// Path of an artifact an earlier step must have produced.
    pub fn require(&self, rel: &str, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Dependency(format!(
                "{} not found; run `{producer}` first",
                p.display()
            )))
        }
    }

    pub fn read(&self, rel: &str, producer: &str) -> Result<Vec<u8>, CliError> {
        let p = self.require(rel, producer)?;
        std::fs::read(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        log::info!("wrote {}", p.display());
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Writes the manifest of this run under `manifests/`.
    pub fn finish(self, cfg: &PipelineConfig) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.to_toml(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            artifacts: self.artifacts,
        };
        let p = self
            .root
            .join("manifests")
            .join(format!("{}.json", self.command.replace(':', "_")));
        std::fs::create_dir_all(p.parent().expect("has parent")).map_err(|e| CliError::io(&p, e))?;
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(manifest)
    }
}

/// Serializes CSV through a closure into bytes.
pub fn csv_bytes<F>(fill: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
{
    let mut buf = Vec::new();
    fill(&mut buf)?;
    Ok(buf)
}
