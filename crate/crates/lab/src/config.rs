//! Experiment and ablation configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rapo_core::rapo::RapoConfig;
use rapo_core::rewards::RewardMode;

use crate::error::{LabError, Result};
use crate::io::DataFormat;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Scores in the file are mapped from `[raw_min, raw_max]` onto `[0, 1]`.
    File {
        path: PathBuf,
        #[serde(default)]
        format: Option<DataFormat>,
        #[serde(default)]
        raw_min: Option<f64>,
        #[serde(default)]
        raw_max: Option<f64>,
    },
    /// Generated with the experiment seed.
    Synthetic { n: usize, d: usize, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyShape {
    pub hidden: usize,
    pub bins: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        Self { hidden: 32, bins: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmStart {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for WarmStart {
    fn default() -> Self {
        Self { epochs: 0, lr: 1e-2, batch: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// Expected score under the policy distribution.
    #[default]
    Mean,
    /// Value of the most probable bin.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split_ratio: f64,
    /// Evaluate every this many steps (0 disables periodic evaluation; the final one always runs).
    pub cadence: u64,
    pub histogram_bins: usize,
    /// Write a checkpoint every this many steps; 0 keeps only warm-start and final.
    pub checkpoint_every: u64,
    pub readout: Readout,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split_ratio: 0.9, cadence: 50, histogram_bins: 10, checkpoint_every: 0, readout: Readout::Mean }
    }
}

/// Full description of one run. The top-level `seed` drives data generation,
/// the split, initialization, warm-start order and RAPO sampling, and
/// replaces `rapo.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// RAPO steps (one mini-batch each).
    pub steps: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub policy: PolicyShape,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub rapo: RapoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Config(msg.into()))
}

impl ExperimentConfig {
    /// The synthetic benchmark: 640 generated samples split 512 / 128, d = 8,
    /// noise 0.05, 101 bins, 1500 steps, no warm start.
    pub fn standard_task(seed: u64, mode: RewardMode, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            output_dir: output_dir.into(),
            steps: 1500,
            dataset: DatasetSpec::Synthetic { n: 640, d: 8, noise: 0.05 },
            policy: PolicyShape::default(),
            warm_start: WarmStart::default(),
            rapo: RapoConfig { reward_mode: mode, lr: 3e-3, momentum: 0.9, seed, ..RapoConfig::default() },
            eval: EvalConfig { split_ratio: 0.8, ..EvalConfig::default() },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Makes relative dataset and output paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let DatasetSpec::File { path, .. } = &mut self.dataset {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn check_paths(&self) -> Result<()> {
        if let DatasetSpec::File { path, format, .. } = &self.dataset {
            if !path.is_file() {
                return bad(format!("dataset file {} does not exist", path.display()));
            }
            if format.is_none() && DataFormat::from_path(path).is_none() {
                return bad(format!("cannot infer the format of {}; set dataset.format", path.display()));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        match &self.dataset {
            DatasetSpec::Synthetic { n, d, noise } => {
                if *n < 2 || *d == 0 {
                    return bad("synthetic dataset needs n >= 2 and d >= 1");
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return bad("synthetic noise must be finite and >= 0");
                }
            }
            DatasetSpec::File { raw_min, raw_max, .. } => {
                if raw_min.is_some() != raw_max.is_some() {
                    return bad("dataset.raw_min and dataset.raw_max go together");
                }
            }
        }
        if self.policy.bins < 2 || self.policy.hidden == 0 {
            return bad("policy needs bins >= 2 and hidden >= 1");
        }
        if self.warm_start.epochs > 0 && (self.warm_start.batch == 0 || !(self.warm_start.lr > 0.0)) {
            return bad("warm_start needs a positive batch and lr");
        }
        if !(self.eval.split_ratio > 0.0 && self.eval.split_ratio < 1.0) {
            return bad("eval.split_ratio must lie in (0, 1)");
        }
        if self.eval.histogram_bins == 0 {
            return bad("eval.histogram_bins must be positive");
        }
        self.rapo.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub schema_version: u32,
    pub modes: Vec<RewardMode>,
    pub seeds: Vec<u64>,
    /// Each run uses this config with its seed and reward mode substituted
    /// and writes under `base.output_dir/<mode>/seed-<seed>`.
    pub base: ExperimentConfig,
}

impl AblationSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        spec.base.resolve_paths(path.parent().unwrap_or(Path::new("")));
        spec.base.check_paths()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.modes.len() < 2 {
            return bad("an ablation needs at least 2 reward modes");
        }
        if self.seeds.is_empty() {
            return bad("an ablation needs at least one seed");
        }
        let mut modes = self.modes.clone();
        modes.sort_by_key(|m| m.name());
        modes.dedup();
        if modes.len() != self.modes.len() {
            return bad("duplicate reward mode in ablation");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("duplicate seed in ablation");
        }
        self.base.validate()
    }

    /// Config of one cell of the matrix.
    pub fn run_config(&self, mode: RewardMode, seed: u64) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        cfg.rapo.seed = seed;
        cfg.rapo.reward_mode = mode;
        cfg.output_dir = self.base.output_dir.join(mode.name()).join(format!("seed-{seed}"));
        cfg
    }
}
