//! Flat key/value run configuration (TOML) with environment overrides.
//!
//! Every key is optional; missing keys take the defaults of [`NetworkConfig`]
//! and [`TrainConfig`]. A variable named `CDINET_<KEY>` (upper case) overrides
//! the file value; its text is parsed as a TOML value, falling back to a plain
//! string, so `CDINET_BASE_LR=1e-3` and `CDINET_SCALE=toy` both work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Scale, NUM_STAGES};
use crate::network::{Ablations, InteractionMode, ModuleSwap, NetworkConfig, StageSplit};
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const ENV_PREFIX: &str = "CDINET_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    // network
    pub scale: Option<Scale>,
    pub stage_channels: Option<[usize; NUM_STAGES]>,
    pub pretrained_weights: Option<PathBuf>,
    pub interaction_mode: Option<InteractionMode>,
    pub without_rde: Option<bool>,
    pub without_dse: Option<bool>,
    pub without_ddr: Option<bool>,
    pub low_stages: Option<Vec<usize>>,
    pub high_stages: Option<Vec<usize>>,
    pub module_swap: Option<ModuleSwap>,
    pub dse_alt_addition: Option<bool>,
    pub top_fusion: Option<bool>,
    pub reduction_ratio: Option<usize>,
    pub rde_mask_activation: Option<bool>,
    // training
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_period: Option<usize>,
    pub total_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub max_iterations: Option<usize>,
    pub image_size: Option<usize>,
    pub augment: Option<bool>,
    pub dtype: Option<String>,
}

pub const KEYS: [&str; 28] = [
    "scale",
    "stage_channels",
    "pretrained_weights",
    "interaction_mode",
    "without_rde",
    "without_dse",
    "without_ddr",
    "low_stages",
    "high_stages",
    "module_swap",
    "dse_alt_addition",
    "top_fusion",
    "reduction_ratio",
    "rde_mask_activation",
    "batch_size",
    "base_lr",
    "lr_decay_factor",
    "lr_decay_period",
    "total_epochs",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "checkpoint_every",
    "max_iterations",
    "image_size",
    "augment",
    "dtype",
];

impl FlatConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::config(format!("config: {e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::config(format!("config: {e}")))
    }

    /// Reads `path` (if any) and applies `CDINET_*` variables from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => std::fs::read_to_string(p)?
                .parse::<toml::Table>()
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        for (name, raw) in env {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if !KEYS.contains(&key.as_str()) {
                continue;
            }
            table.insert(key, parse_env_value(&raw));
        }
        Self::from_table(table)
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let scale = self.scale.unwrap_or(Scale::Full);
        let mut backbone = match (scale, self.stage_channels) {
            (Scale::Full, None) => BackboneConfig::full(),
            (Scale::Full, Some(ch)) => BackboneConfig {
                stage_channels: ch,
                ..BackboneConfig::full()
            },
            (Scale::Toy, Some(ch)) => BackboneConfig::toy(ch),
            (Scale::Toy, None) => return Err(Error::config("toy scale needs stage_channels")),
        };
        backbone.pretrained_weights_path = self.pretrained_weights.clone();
        let split = StageSplit::default();
        let c = NetworkConfig {
            backbone,
            interaction_mode: self.interaction_mode.unwrap_or_default(),
            ablations: Ablations {
                without_rde: self.without_rde.unwrap_or(false),
                without_dse: self.without_dse.unwrap_or(false),
                without_ddr: self.without_ddr.unwrap_or(false),
            },
            stage_split: StageSplit::new(
                self.low_stages.clone().unwrap_or(split.low),
                self.high_stages.clone().unwrap_or(split.high),
            ),
            module_swap: self.module_swap.unwrap_or_default(),
            dse_alt_addition: self.dse_alt_addition.unwrap_or(false),
            top_fusion: self.top_fusion.unwrap_or(true),
            reduction_ratio: self.reduction_ratio.unwrap_or(crate::attention::DEFAULT_REDUCTION),
            rde_mask_activation: self.rde_mask_activation.unwrap_or(true),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let c = TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            base_lr: self.base_lr.unwrap_or(d.base_lr),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(d.lr_decay_factor),
            lr_decay_period: self.lr_decay_period.unwrap_or(d.lr_decay_period),
            total_epochs: self.total_epochs.unwrap_or(d.total_epochs),
            seed: self.seed.unwrap_or(d.seed),
            adam_beta1: self.adam_beta1.unwrap_or(d.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(d.adam_beta2),
            adam_eps: self.adam_eps.unwrap_or(d.adam_eps),
            checkpoint_every: self.checkpoint_every.unwrap_or(d.checkpoint_every),
            max_iterations: self.max_iterations.or(d.max_iterations),
            image_size: self.image_size.unwrap_or(d.image_size),
            augment: self.augment.unwrap_or(d.augment),
            dtype: self.dtype.clone().unwrap_or(d.dtype),
        };
        c.validate()?;
        Ok(c)
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = FlatConfig::from_toml_str("").unwrap();
        assert_eq!(c.network().unwrap(), NetworkConfig::full());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
    }

    #[test]
    fn file_values_and_env_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "scale = \"toy\"\nstage_channels = [8, 16, 32, 64, 64]\nbase_lr = 1e-3\nwithout_ddr = true\n",
        )
        .unwrap();
        let env = [
            ("CDINET_BASE_LR".to_string(), "2e-3".to_string()),
            ("CDINET_DTYPE".to_string(), "f64".to_string()),
            ("CDINET_INTERACTION_MODE".to_string(), "bidirectional".to_string()),
            ("CDINET_LOW_STAGES".to_string(), "[1, 2, 3]".to_string()),
            ("CDINET_HIGH_STAGES".to_string(), "[4, 5]".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let c = FlatConfig::load_with_env(Some(&path), env).unwrap();
        let t = c.train().unwrap();
        assert_eq!(t.base_lr, 2e-3);
        assert_eq!(t.dtype, "f64");
        let n = c.network().unwrap();
        assert!(n.ablations.without_ddr);
        assert_eq!(n.interaction_mode, InteractionMode::Bidirectional);
        assert_eq!(n.stage_split.low, vec![1, 2, 3]);
        assert_eq!(n.backbone.stage_channels, [8, 16, 32, 64, 64]);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(FlatConfig::from_toml_str("learning_rate = 1").is_err());
        assert!(FlatConfig::from_toml_str("batch_size = \"four\"").is_err());
        let c = FlatConfig::from_toml_str("lr_decay_factor = 0.5").unwrap();
        assert!(c.train().is_err());
        let c = FlatConfig::from_toml_str("scale = \"toy\"").unwrap();
        assert!(c.network().is_err());
    }

    #[test]
    fn key_list_matches_struct() {
        let full = FlatConfig {
            scale: Some(Scale::Toy),
            stage_channels: Some([1; 5]),
            pretrained_weights: Some("x".into()),
            interaction_mode: Some(InteractionMode::Discrepant),
            without_rde: Some(false),
            without_dse: Some(false),
            without_ddr: Some(false),
            low_stages: Some(vec![]),
            high_stages: Some(vec![]),
            module_swap: Some(ModuleSwap::None),
            dse_alt_addition: Some(false),
            top_fusion: Some(true),
            reduction_ratio: Some(1),
            rde_mask_activation: Some(true),
            batch_size: Some(1),
            base_lr: Some(1.0),
            lr_decay_factor: Some(1.0),
            lr_decay_period: Some(1),
            total_epochs: Some(1),
            seed: Some(1),
            adam_beta1: Some(0.0),
            adam_beta2: Some(0.0),
            adam_eps: Some(1.0),
            checkpoint_every: Some(1),
            max_iterations: Some(1),
            image_size: Some(1),
            augment: Some(true),
            dtype: Some("f32".into()),
        };
        let table = toml::Table::try_from(&full).unwrap();
        let mut keys: Vec<&str> = table.keys().map(String::as_str).collect();
        let mut expected = KEYS.to_vec();
        keys.sort();
        expected.sort();
        assert_eq!(keys, expected);
    }
}
