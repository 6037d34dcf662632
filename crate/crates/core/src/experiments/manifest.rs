use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError, ExperimentKind};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifacts behind one trained or evaluated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub split_hash: String,
    pub corpus_hash: Option<String>,
    pub tokenizer_hash: Option<String>,
    /// File name under `checkpoints/` and the SHA-256 of its bytes.
    pub base_checkpoint: Option<(String, String)>,
    pub adapter_checkpoint: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub cohort_hash: String,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn new(experiment: ExperimentKind, config: &ExperimentConfig, cohort_hash: String) -> Self {
        Self {
            experiment,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: sha256_hex(config.to_toml_string().as_bytes()),
            cohort_hash,
            runs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let src = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let m: Self = serde_json::from_str(&src).map_err(|e| ExperimentError::Manifest(format!("{}: {e}", path.display())))?;
        if m.config_hash != sha256_hex(m.config.to_toml_string().as_bytes()) {
            return Err(ExperimentError::Manifest("config hash does not match the recorded config".into()));
        }
        Ok(m)
    }

    pub fn run(&self, label: &str, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.label == label && r.seed == seed)
    }
}
