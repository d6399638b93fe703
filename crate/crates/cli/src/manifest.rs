use std::collections::BTreeMap;
use std::path::Path;

use adens::config::RunConfig;
use adens::evaluation::Metrics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Record of one training run, written once at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    /// sha256 of every input file, keyed by config field.
    pub corpus_checksums: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    /// Artifact file names relative to the run directory.
    pub artifacts: Vec<String>,
    pub best_epoch: usize,
    pub steps: u64,
    pub dev_metrics: Option<Metrics>,
    pub test_metrics: Option<Metrics>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
