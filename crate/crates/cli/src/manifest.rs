//! Record of a `simulate` run: configuration, seeds and written files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// How per-step generator streams derive from the master seed.
pub const SEED_SCHEME: &str = "ChaCha8(master) stream = purpose<<56 | trial<<24 | step<<8 | channel; \
purpose experiment=1 calibration=2; channel pairs=0 signal_twins=1 signal_background=2 idler_background=3";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialFiles {
    pub trial: u32,
    pub signal: PathBuf,
    pub idlers: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFiles {
    pub signal: PathBuf,
    pub idler: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config_sha256: String,
    pub master_seed: u64,
    pub seed_scheme: String,
    /// Configuration with the effective seed filled in.
    pub config: ExperimentConfig,
    /// Paths relative to the manifest's directory.
    pub trials: Vec<TrialFiles>,
    #[serde(default)]
    pub calibration_pairs: Vec<PairFiles>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Validation(format!("manifest version {} is not supported", m.version)));
        }
        if m.config.hash() != m.config_sha256 {
            return Err(CliError::Validation("manifest config hash does not match its config".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
