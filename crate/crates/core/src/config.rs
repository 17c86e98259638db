//! Run configuration: a flat TOML document. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{load_dataset, synthetic_dataset, Dataset, DatasetKind, DatasetOptions, PermutationSpec};
use crate::model::{Arrangement, LearnedPositionConfig, LossKind, PerceiverConfig};
use crate::optim::{LambConfig, Schedule};
use crate::scalar::{DType, Scalar};
use crate::train::TrainOptions;

fn yes() -> bool {
    true
}

fn default_seed() -> u64 {
    0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "RunConfig::default_dtype")]
    pub dtype: String,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,

    /// Generated dataset; exclusive with `dataset_path`.
    #[serde(default)]
    pub dataset_kind: Option<DatasetKind>,
    /// Directory written by `save_dataset`.
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub train_size: usize,
    #[serde(default)]
    pub test_size: usize,
    #[serde(default)]
    pub fourier_bands: Option<usize>,
    #[serde(default)]
    pub max_resolution: Option<f64>,
    /// Seed of one shared row permutation applied to every item.
    #[serde(default)]
    pub permute_seed: Option<u64>,

    /// Input rows and channels for count-only configs without a dataset.
    #[serde(default)]
    pub input_rows: Option<usize>,
    #[serde(default)]
    pub input_channels: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,

    pub num_cross_attends: usize,
    pub self_attends_per_block: usize,
    pub blocks_per_cross: usize,
    pub latent_n: usize,
    pub latent_d: usize,
    #[serde(default = "yes")]
    pub share_cross_after_first: bool,
    #[serde(default = "yes")]
    pub share_latent_towers: bool,
    #[serde(default)]
    pub arrangement: Arrangement,
    #[serde(default = "RunConfig::one")]
    pub cross_heads: usize,
    #[serde(default = "RunConfig::one")]
    pub latent_heads: usize,
    #[serde(default = "RunConfig::one_f")]
    pub dense_widening: f64,
    #[serde(default = "RunConfig::default_init_scale")]
    pub latent_init_scale: f64,
    #[serde(default = "RunConfig::default_eps")]
    pub layer_norm_eps: f64,
    /// Width of a learned per-row position table; none when unset.
    #[serde(default)]
    pub learned_position_channels: Option<usize>,
    #[serde(default = "RunConfig::one_f")]
    pub learned_position_init_scale: f64,
    #[serde(default)]
    pub loss: LossKind,

    #[serde(default = "RunConfig::default_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub decay_epochs: Vec<u64>,
    #[serde(default = "RunConfig::default_decay")]
    pub decay_factor: f64,
    /// Defaults to one pass over the training split.
    #[serde(default)]
    pub epoch_length_steps: Option<u64>,
    #[serde(default = "RunConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "RunConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "RunConfig::default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,

    #[serde(default)]
    pub steps: u64,
    #[serde(default = "RunConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub checkpoint_every_steps: u64,
    /// Probability of zeroing the video stream of a training example.
    #[serde(default)]
    pub video_dropout: f64,
    /// Zero the video stream at evaluation too.
    #[serde(default)]
    pub drop_video_at_eval: bool,
}

impl RunConfig {
    fn default_dtype() -> String {
        "f32".into()
    }
    fn one() -> usize {
        1
    }
    fn one_f() -> f64 {
        1.0
    }
    fn default_init_scale() -> f64 {
        0.02
    }
    fn default_eps() -> f64 {
        1e-5
    }
    fn default_lr() -> f64 {
        0.004
    }
    fn default_decay() -> f64 {
        0.1
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_adam_eps() -> f64 {
        1e-6
    }
    fn default_batch() -> usize {
        16
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn dtype(&self) -> Result<DType> {
        DType::parse(&self.dtype).ok_or_else(|| Error::Config(format!("dtype: unknown value `{}`", self.dtype)))
    }

    pub fn validate(&self) -> Result<()> {
        self.dtype()?;
        if self.dataset_kind.is_some() && self.dataset_path.is_some() {
            return Err(Error::Config("dataset_kind and dataset_path are mutually exclusive".into()));
        }
        if let Some(p) = &self.dataset_path {
            if !p.is_dir() {
                return Err(Error::Config(format!("dataset_path: {} is not a directory", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.video_dropout) {
            return Err(Error::Config("video_dropout must lie in [0, 1]".into()));
        }
        self.schedule(1).validate()?;
        self.lamb().validate()
    }

    pub fn has_dataset(&self) -> bool {
        self.dataset_kind.is_some() || self.dataset_path.is_some()
    }

    /// Generates or loads the dataset, applying the shared permutation if
    /// one is configured.
    pub fn dataset<T: Scalar>(&self) -> Result<Dataset<T>> {
        let data = match (&self.dataset_kind, &self.dataset_path) {
            (Some(kind), None) => {
                let opts = DatasetOptions { fourier_bands: self.fourier_bands, max_resolution: self.max_resolution };
                synthetic_dataset(*kind, self.train_size, self.test_size, self.seed, opts)?
            }
            (None, Some(path)) => load_dataset(path)?,
            _ => return Err(Error::Config("dataset_path: no dataset configured".into())),
        };
        match self.permute_seed {
            Some(s) => data.permuted(&PermutationSpec::random(data.rows(), s)),
            None => Ok(data),
        }
    }

    /// Model config, taking input shape and classes from the dataset when
    /// there is one.
    pub fn model_config<T: Scalar>(&self, data: Option<&Dataset<T>>) -> Result<PerceiverConfig> {
        let (rows, channels, classes, modalities) = match data {
            Some(d) => (Some(d.rows()), Some(d.channels()), Some(d.num_classes), d.modalities.clone()),
            None => (self.input_rows, self.input_channels, self.num_classes, Vec::new()),
        };
        let input_channels =
            channels.ok_or_else(|| Error::Config("input_channels: required without a dataset".into()))?;
        let num_classes = classes.ok_or_else(|| Error::Config("num_classes: required without a dataset".into()))?;
        let learned_position = match self.learned_position_channels {
            Some(ch) => Some(LearnedPositionConfig {
                rows: rows.ok_or_else(|| Error::Config("input_rows: required for a learned position table".into()))?,
                channels: ch,
                init_scale: self.learned_position_init_scale,
            }),
            None => None,
        };
        let cfg = PerceiverConfig {
            num_cross_attends: self.num_cross_attends,
            self_attends_per_block: self.self_attends_per_block,
            blocks_per_cross: self.blocks_per_cross,
            latent_n: self.latent_n,
            latent_d: self.latent_d,
            share_cross_after_first: self.share_cross_after_first,
            share_latent_towers: self.share_latent_towers,
            arrangement: self.arrangement,
            num_classes,
            cross_heads: self.cross_heads,
            latent_heads: self.latent_heads,
            input_channels,
            dense_widening: self.dense_widening,
            latent_init_scale: self.latent_init_scale,
            layer_norm_eps: self.layer_norm_eps,
            modalities,
            learned_position,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self, default_epoch_length: u64) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            epoch_length: self.epoch_length_steps.unwrap_or(default_epoch_length).max(1),
        }
    }

    pub fn lamb(&self) -> LambConfig {
        LambConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            force_unit_trust: false,
        }
    }

    pub fn train_options(&self, train_len: usize, out_dir: Option<PathBuf>) -> TrainOptions {
        let per_epoch = (train_len as u64).div_ceil(self.batch_size.max(1) as u64);
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            schedule: self.schedule(per_epoch),
            lamb: self.lamb(),
            loss: self.loss,
            video_dropout: self.video_dropout,
            checkpoint_every: self.checkpoint_every_steps,
            out_dir,
        }
    }

    /// Copy with one key replaced, the value given in TOML syntax.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::Format(e.to_string()))?;
        let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
            .or_else(|_| toml::from_str(&format!("v = \"{value}\"")))
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        table.insert(key.to_string(), parsed["v"].clone());
        let text = toml::to_string(&table).map_err(|e| Error::Format(e.to_string()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
dataset_kind = "sign-of-mean"
train_size = 8
test_size = 4
num_cross_attends = 1
self_attends_per_block = 1
blocks_per_cross = 1
latent_n = 4
latent_d = 8
"#;

    #[test]
    fn unknown_keys_are_errors() {
        let e = RunConfig::parse(&format!("{BASE}\nlearning_rate = 0.1\n")).unwrap_err();
        assert!(e.is_config_error());
        assert!(e.to_string().contains("learning_rate"), "{e}");
    }

    #[test]
    fn resolved_round_trip() {
        let cfg = RunConfig::parse(BASE).unwrap();
        let again = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let data = cfg.dataset::<f32>().unwrap();
        let m = cfg.model_config(Some(&data)).unwrap();
        assert_eq!(m.input_channels, data.channels());
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.with_override("fourier_bands", "8").unwrap().fourier_bands, Some(8));
        assert_eq!(cfg.with_override("latent_init_scale", "0.1").unwrap().latent_init_scale, 0.1);
        assert!(cfg.with_override("no_such_key", "1").is_err());
    }

    #[test]
    fn missing_dataset_path_names_field() {
        let e = RunConfig::parse(
            "dataset_path = \"/nonexistent/dir\"\nnum_cross_attends = 1\nself_attends_per_block = 1\nblocks_per_cross = 1\nlatent_n = 2\nlatent_d = 4\n",
        )
        .unwrap_err();
        assert!(e.to_string().contains("dataset_path"));
    }
}
