//! On-disk artifacts. Every JSON artifact records the hash of the
//! configuration that produced it and the SHA-256 of the data it refers to.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bias_audit::pipeline::RankedRuleSet;
use bias_audit::sim::{BiasSpec, GroundTruthRule};
use bias_audit::{AuditError, Result};

use crate::config::AuditConfig;

pub const ABSTRACTION_FILE: &str = "abstraction.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RULESETS_FILE: &str = "rulesets.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CERTIFICATES_FILE: &str = "certificates.csv";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| AuditError::Schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config_hash: String,
    pub data_sha256: String,
    pub biases: Vec<BiasSpec>,
    pub rules: Vec<GroundTruthRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetFile {
    pub config_hash: String,
    pub data_sha256: String,
    pub ruleset: RankedRuleSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetsFile {
    pub config_hash: String,
    pub data_sha256: String,
    pub data_path: PathBuf,
    pub seed: u64,
    pub rulesets: Vec<RankedRuleSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: AuditConfig,
    pub files: Vec<FileEntry>,
}

/// Writes `manifest.json` listing `files` (relative to `dir`) with their digests.
pub fn write_manifest(dir: &Path, command: &str, cfg: &AuditConfig, seed: u64, files: &[String]) -> Result<()> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        entries.push(FileEntry { path: f.clone(), sha256: sha256_file(&dir.join(f))? });
    }
    let manifest = Manifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash: cfg.hash(command),
        config: cfg.recorded(),
        files: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}
