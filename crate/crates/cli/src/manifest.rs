//! Run manifests: one JSON record per command invocation.
//!
//! The manifest names every file the command read and wrote, hashes each
//! artifact, and pins the digest of the effective configuration, so a run
//! can be audited (or diffed against a rerun) without re-executing it.
//! Collections are `BTreeMap`s to keep the serialized order stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use noduleseg_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex-encoded SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// One produced file: where it is and what it hashed to at write time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything recorded about one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunManifest {
    /// Crate version of the binary that wrote this manifest.
    pub tool_version: String,
    /// Subcommand name.
    pub command: String,
    /// Master seed the run started from.
    pub seed: u64,
    /// SHA-256 of the `config.json` written next to this manifest.
    pub config_digest: String,
    /// Seeds handed to each randomized stage, keyed by stage name.
    pub stage_seeds: BTreeMap<String, u64>,
    /// Files the command read, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Files the command wrote, keyed by role.
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    /// Wall-clock milliseconds per stage.
    pub timings_ms: BTreeMap<String, u64>,
    /// Labeling energy of the mask before refinement, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_before: Option<f64>,
    /// Labeling energy of the mask after refinement, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_after: Option<f64>,
    /// Evaluation against ground truth, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    /// True when the command failed after writing some artifacts.
    pub partial: bool,
    /// Free-form remarks (resolved parameters, skipped stages, ...).
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_digest: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_digest,
            stage_seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            energy_before: None,
            energy_after: None,
            metrics: None,
            partial: false,
            notes: Vec::new(),
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) {
        self.inputs
            .insert(role.to_string(), path.display().to_string());
    }

    /// Hash a file the command just wrote and list it as an artifact.
    /// Fails if the file does not exist, which keeps the manifest honest.
    pub fn record_artifact(&mut self, role: &str, path: &Path) -> Result<()> {
        let record = ArtifactRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        };
        self.artifacts.insert(role.to_string(), record);
        Ok(())
    }

    pub fn record_timing(&mut self, stage: &str, elapsed: Duration) {
        self.timings_ms
            .insert(stage.to_string(), elapsed.as_millis() as u64);
    }

    pub fn record_stage_seed(&mut self, stage: &str, seed: u64) {
        self.stage_seeds.insert(stage.to_string(), seed);
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Write `manifest.json` into `dir` and return its path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut json = serde_json::to_string_pretty(self)
            .context("serializing manifest")?;
        json.push('\n');
        fs::write(&path, json)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
    }
}
