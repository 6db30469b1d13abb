//! Run configuration: one structured file drives data generation, both
//! training stages, forecasting, and evaluation. Every default matches the
//! reference hyperparameters; `--set key=value` overrides any leaf.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticParams;
use crate::diffusion::PosteriorMode;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Path to an existing dataset; when unset, synthetic data is generated.
    pub path: Option<PathBuf>,
    /// "stbin" or "csv".
    pub format: String,
    pub synthetic: SyntheticParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: None, format: "stbin".into(), synthetic: SyntheticParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub m: usize,
    pub p: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { m: 12, p: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: 64, blocks: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_first: f64,
    pub beta_last: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 50, beta_first: 1e-4, beta_last: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub k: usize,
    pub posterior_mode: PosteriorMode,
    /// Validation ensemble size for Stage-2 early stopping.
    pub val_samples: usize,
    /// Cap on validation windows scored per epoch (0 = no cap).
    pub val_window_cap: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k: 50,
            posterior_mode: PosteriorMode::PerStep,
            val_samples: 3,
            val_window_cap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub threshold: f64,
    /// 2 injects σ² (literal), 1 injects σ.
    pub scale_power: u8,
    pub include_dc: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig { threshold: 0.1, scale_power: 2, include_dc: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub m_qis: usize,
    pub alpha_ci: f64,
    /// Ensemble median instead of mean as the point forecast.
    pub use_median: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { m_qis: 10, alpha_ci: 0.1, use_median: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// All artifacts (dataset, checkpoints, ensemble, reports) live here.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub windows: WindowConfig,
    /// Chronological train:val:test ratio.
    pub split: [usize; 3],
    pub mean: NetConfig,
    pub denoiser: NetConfig,
    pub schedule: ScheduleConfig,
    pub training: TrainConfig,
    /// Optional override for the diffusion stage; when absent, `training`
    /// governs both stages.
    #[serde(default)]
    pub diffusion_training: Option<TrainConfig>,
    pub sampling: SamplingConfig,
    pub scale: ScaleConfig,
    pub metrics: MetricConfig,
    /// Train and apply the mean model; false runs the diffusion-only
    /// ablation (residuals become the raw targets).
    #[serde(default = "default_true")]
    pub use_mean_model: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            windows: WindowConfig::default(),
            split: [6, 2, 2],
            mean: NetConfig { hidden: 64, blocks: 4 },
            denoiser: NetConfig { hidden: 128, blocks: 8 },
            schedule: ScheduleConfig::default(),
            training: TrainConfig::default(),
            diffusion_training: None,
            sampling: SamplingConfig::default(),
            scale: ScaleConfig::default(),
            metrics: MetricConfig::default(),
            use_mean_model: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.windows.m == 0 || self.windows.p == 0 {
            return Err(Error::Config("window horizons must be positive".into()));
        }
        if self.split.iter().any(|&r| r == 0) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if self.sampling.k == 0 {
            return Err(Error::Config("sampling.k must be at least 1".into()));
        }
        if !matches!(self.scale.scale_power, 1 | 2) {
            return Err(Error::Config("scale.scale_power must be 1 or 2".into()));
        }
        if self.data.format != "stbin" && self.data.format != "csv" {
            return Err(Error::Config(format!("unknown data format {:?}", self.data.format)));
        }
        Ok(())
    }

    /// Training hyperparameters for the diffusion stage.
    pub fn diffusion_training(&self) -> &TrainConfig {
        self.diffusion_training.as_ref().unwrap_or(&self.training)
    }

    /// Stable hash of the effective configuration; embedded in checkpoints
    /// so downstream stages can detect mismatched artifacts.
    pub fn fingerprint(&self) -> String {
        // The output location is not part of the experiment identity: the
        // same run in a different directory must produce identical artifacts.
        let mut scientific = self.clone();
        scientific.out_dir = PathBuf::new();
        let canonical = serde_json::to_string(&scientific).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_toml_leaf(raw: &str) -> toml::Value {
    // Try native TOML typing first; fall back to a string literal.
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    if raw.starts_with('[') || raw.starts_with('{') {
        // Arrays and inline tables are only valid TOML as a value position;
        // parse through a one-key document.
        if let Ok(toml::Value::Table(mut t)) = format!("v = {raw}").parse::<toml::Value>() {
            if let Some(v) = t.remove("v") {
                return v;
            }
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_toml_leaf(raw));
    Ok(())
}

/// Load a config file (TOML) and apply `key.path=value` overrides. A
/// missing path yields the built-in defaults, still subject to overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value: toml::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse()
                .map_err(|e| Error::Config(format!("config parse error in {}: {e}", p.display())))?
        }
        None => toml::Value::Table(toml::map::Map::new()),
    };
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw)?;
    }
    let cfg: RunConfig =
        value.try_into().map_err(|e| Error::Config(format!("config field error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
