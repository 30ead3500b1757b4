use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::nn::NetworkSpec;
use crate::optim::AdamConfig;
use crate::phantom::{AugmentConfig, DatasetConfig, Interpolation, PhantomRanges};
use crate::train::TrainConfig;

/// Everything a run needs, as one flat key-value table. Every field has a
/// default; `--print-config` shows them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Named preset these values started from: desk, paper or smoke.
    pub preset: String,

    // dataset
    pub data_dir: PathBuf,
    pub subjects: usize,
    pub dim: usize,
    pub voxel_size: f64,
    pub min_scans: usize,
    pub max_scans: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub supersample: usize,

    // network
    pub heads: usize,
    pub base_channels: usize,
    /// Optional TOML file holding a full network spec; overrides heads and
    /// base_channels.
    pub network_file: Option<PathBuf>,

    // optimization
    /// desk (60 Adam epochs) or paper (170).
    pub schedule: String,
    /// Overrides the schedule's Adam epoch count when set.
    pub adam_epochs: Option<usize>,
    pub batch_size: usize,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eval_interval: usize,
    pub swa_cycles: usize,
    pub swa_epochs_per_cycle: usize,
    pub swa_lr_max: f64,
    pub swa_lr_min: f64,

    // augmentation
    pub aug_noise_prob: f64,
    pub aug_noise_sigma: f64,
    pub aug_translate_prob: f64,
    pub aug_max_shift: u32,
    pub aug_rotate_prob: f64,
    pub aug_max_angle_deg: f64,
    pub aug_interpolation: Interpolation,

    // seeds
    pub seed_data: u64,
    pub seed_model: u64,
    pub seed_train: u64,

    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetConfig::default();
        let train = TrainConfig::default();
        let aug = AugmentConfig::default();
        Self {
            preset: "desk".into(),
            data_dir: "data".into(),
            subjects: data.subjects,
            dim: data.dim,
            voxel_size: data.voxel_size,
            min_scans: data.min_scans,
            max_scans: data.max_scans,
            split_train: data.ratios[0],
            split_val: data.ratios[1],
            split_test: data.ratios[2],
            supersample: data.ranges.supersample,
            heads: 4,
            base_channels: 16,
            network_file: None,
            schedule: "desk".into(),
            adam_epochs: None,
            batch_size: train.batch_size,
            adam_lr: train.adam.lr,
            adam_beta1: train.adam.beta1,
            adam_beta2: train.adam.beta2,
            adam_eps: train.adam.eps,
            eval_interval: train.eval_interval,
            swa_cycles: train.swa_cycles,
            swa_epochs_per_cycle: train.swa_epochs_per_cycle,
            swa_lr_max: train.swa_lr_max,
            swa_lr_min: train.swa_lr_min,
            aug_noise_prob: aug.noise_prob,
            aug_noise_sigma: aug.noise_sigma,
            aug_translate_prob: aug.translate_prob,
            aug_max_shift: aug.max_shift,
            aug_rotate_prob: aug.rotate_prob,
            aug_max_angle_deg: aug.max_angle_deg,
            aug_interpolation: aug.interpolation,
            seed_data: 0,
            seed_model: 0,
            seed_train: 0,
            out: "runs/default".into(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["desk", "paper", "smoke"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let base = Self::default();
        match name {
            "desk" => Ok(base),
            "paper" => {
                let aug = AugmentConfig::paper();
                Ok(Self {
                    preset: "paper".into(),
                    schedule: "paper".into(),
                    aug_max_shift: aug.max_shift,
                    aug_max_angle_deg: aug.max_angle_deg,
                    ..base
                })
            }
            "smoke" => Ok(Self {
                preset: "smoke".into(),
                subjects: 8,
                dim: 16,
                // Three scans each keeps the one-subject validation split
                // large enough for ICC.
                min_scans: 3,
                max_scans: 3,
                adam_epochs: Some(2),
                swa_cycles: 1,
                ..base
            }),
            other => Err(CliError::Validation(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Preset defaults overlaid with the keys of a TOML document. The
    /// document's own `preset` key is used when `preset` is `None`.
    pub fn from_toml_layered(text: &str, preset: Option<&str>) -> Result<Self, CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let name = match preset {
            Some(p) => p.to_string(),
            None => match table.get("preset") {
                Some(toml::Value::String(s)) => s.clone(),
                Some(_) => return Err(CliError::Validation("config: preset must be a string".into())),
                None => "desk".to_string(),
            },
        };
        let base = Self::preset(&name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Validation(e.to_string()))?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        merged.insert("preset".into(), toml::Value::String(name));
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<&str>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_layered(&text, preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !matches!(self.schedule.as_str(), "desk" | "paper") {
            return bad(format!("schedule must be desk or paper, got {:?}", self.schedule));
        }
        if self.dim == 0 || self.batch_size == 0 || self.heads == 0 || self.base_channels == 0 {
            return bad("dim, batch_size, heads and base_channels must be positive".into());
        }
        if self.heads != 1 && self.heads != 4 && self.network_file.is_none() {
            return bad(format!("heads must be 1 or 4 for the built-in network, got {}", self.heads));
        }
        if self.min_scans == 0 || self.min_scans > self.max_scans {
            return bad(format!("scan range {}..={} is invalid", self.min_scans, self.max_scans));
        }
        let sum = self.split_train + self.split_val + self.split_test;
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios sum to {sum}, expected 1"));
        }
        Ok(())
    }

    pub fn adam_epochs(&self) -> usize {
        self.adam_epochs
            .unwrap_or(if self.schedule == "paper" { 170 } else { 60 })
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            subjects: self.subjects,
            dim: self.dim,
            voxel_size: self.voxel_size,
            min_scans: self.min_scans,
            max_scans: self.max_scans,
            ratios: [self.split_train, self.split_val, self.split_test],
            seed: self.seed_data,
            ranges: PhantomRanges {
                supersample: self.supersample,
                ..PhantomRanges::default()
            },
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            noise_prob: self.aug_noise_prob,
            noise_sigma: self.aug_noise_sigma,
            translate_prob: self.aug_translate_prob,
            max_shift: self.aug_max_shift,
            rotate_prob: self.aug_rotate_prob,
            max_angle_deg: self.aug_max_angle_deg,
            interpolation: self.aug_interpolation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.adam_lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            adam_epochs: self.adam_epochs(),
            eval_interval: self.eval_interval,
            swa_cycles: self.swa_cycles,
            swa_epochs_per_cycle: self.swa_epochs_per_cycle,
            swa_lr_max: self.swa_lr_max,
            swa_lr_min: self.swa_lr_min,
            augment: self.augment_config(),
            seed: self.seed_train,
        }
    }

    /// The network for volumes of side `dim` with `measurements` outputs.
    pub fn network_spec(&self, dim: usize, measurements: usize) -> Result<NetworkSpec, CliError> {
        match &self.network_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
                let spec: NetworkSpec = toml::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("network spec {}: {e}", path.display())))?;
                if spec.measurements != measurements {
                    return Err(CliError::Validation(format!(
                        "network spec predicts {} measurements, dataset has {measurements}",
                        spec.measurements
                    )));
                }
                Ok(spec)
            }
            None => Ok(NetworkSpec::desk(dim, self.base_channels, measurements, self.heads)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for p in PRESETS {
            let cfg = RunConfig::preset(p).unwrap();
            let back = RunConfig::from_toml_layered(&cfg.to_toml(), None).unwrap();
            assert_eq!(back, cfg, "preset {p}");
        }
    }

    #[test]
    fn file_keys_override_preset() {
        let cfg = RunConfig::from_toml_layered("preset = \"smoke\"\nseed_model = 9\n", None).unwrap();
        assert_eq!(cfg.subjects, 8);
        assert_eq!(cfg.dim, 16);
        assert_eq!(cfg.seed_model, 9);
        assert_eq!(cfg.adam_epochs(), 2);
        assert_eq!(cfg.train_config().swa_cycles, 1);
    }

    #[test]
    fn schedules() {
        assert_eq!(RunConfig::preset("desk").unwrap().adam_epochs(), 60);
        let paper = RunConfig::preset("paper").unwrap();
        assert_eq!(paper.adam_epochs(), 170);
        assert_eq!(paper.train_config().augment.max_shift, 15);
        assert_eq!(paper.train_config().swa_cycles, 5);
    }

    #[test]
    fn rejects_unknown_keys_and_presets() {
        assert!(RunConfig::from_toml_layered("learning_rate = 3\n", None).is_err());
        assert!(RunConfig::from_toml_layered("", Some("huge")).is_err());
        assert!(RunConfig::from_toml_layered("schedule = \"fast\"\n", None).is_err());
    }
}
