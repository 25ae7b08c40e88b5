//! The single JSON document that drives every CLI command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::eval::cluster::DEFAULT_RESTARTS;
use crate::networks::{ArchConfig, ModelKind};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Clusters for the purity table.
    pub k: usize,
    pub restarts: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Master seed for k-means restarts.
    pub seed: u64,
    /// Name written in the `dataset` column of metrics.csv.
    pub dataset_name: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            restarts: DEFAULT_RESTARTS,
            k_min: 2,
            k_max: 20,
            seed: 0,
            dataset_name: "synthetic".into(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("eval k and restarts must be positive".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::InvalidArgument(format!("bad inertia range {}..={}", self.k_min, self.k_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub data: GeneratorConfig,
    pub eval: EvalConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Pvae,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            data: GeneratorConfig::default(),
            eval: EvalConfig::default(),
            out_dir: None,
        }
    }
}

pub const EFFECTIVE_CONFIG: &str = "config.json";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.eval.validate()?;
        if self.data.feat_dim != self.arch.audio_feat_dim {
            return Err(Error::ConfigMismatch(format!(
                "data feat_dim {} vs arch audio_feat_dim {}",
                self.data.feat_dim, self.arch.audio_feat_dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes the fully resolved config into `dir`.
    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        fs::write(&path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"epochs": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
        let c = RunConfig::from_json(r#"{"train": {"epochs": 3}, "model": "vae-im"}"#).unwrap();
        assert_eq!((c.train.epochs, c.model), (3, ModelKind::VaeImage));
    }

    #[test]
    fn feat_dim_must_agree() {
        assert!(matches!(
            RunConfig::from_json(r#"{"data": {"feat_dim": 4}}"#),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
