//! Flat key-value config files.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, values are
//! numbers, quoted strings, booleans or `[a, b, …]` arrays (TOML syntax, no
//! tables). Unknown keys are rejected. Command-line flags override file values.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

/// `dims = 4` or `dims = "gap"`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DimsValue {
    Fixed(usize),
    Named(String),
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,

    // simulate
    pub preset: Option<String>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub b: Option<f64>,
    pub noise_rate: Option<f64>,
    pub sensors: Option<Vec<[f64; 3]>>,
    pub k: Option<f64>,
    pub sigma: Option<f64>,
    pub sample_rate: Option<f64>,
    pub base_hz: Option<f64>,

    // featurize
    pub mode: Option<String>,
    pub frame_len: Option<usize>,
    pub bins: Option<usize>,
    pub frame_ms: Option<f64>,
    pub hop_ms: Option<f64>,
    pub window: Option<String>,

    // embed, fit-lift, observe, extend
    pub epsilon_factor: Option<f64>,
    pub eig_count: Option<usize>,
    pub dims: Option<DimsValue>,
    pub covariance_window: Option<usize>,
    pub rank_policy: Option<String>,
    pub weighting: Option<String>,
    pub gamma: Option<f64>,
    pub dt_eff: Option<f64>,
    pub init: Option<String>,
    pub method: Option<String>,

    // experiments
    pub c_values: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub frames: Option<usize>,
    pub ma_windows: Option<Vec<usize>>,
    pub coords: Option<usize>,
    pub burst_len: Option<usize>,
    pub stride: Option<usize>,
    pub modes: Option<usize>,
    pub train_frames: Option<usize>,
    pub extend_frames: Option<usize>,
    pub out_dir: Option<String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
