//! Flat `key = value` run configuration: model, optimization, memory,
//! and data settings in one diff-friendly text file. Command-line flags
//! override file values.

use crate::data::Generator;
use crate::error::{MovitError, Result};
use crate::memory::EmaOrientation;
use crate::pal::MmdVariant;
use crate::train::TrainConfig;
use crate::vit::{CacheToken, ViTConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Dataset selection: synthetic generation parameters, or an image
/// folder root with `train/` and `test/` class trees.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub generator: Generator,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub noise_std: f64,
    pub data_seed: u64,
    pub data_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generator: Generator::Textures,
            samples_per_class: 200,
            test_samples_per_class: 50,
            noise_std: 0.3,
            data_seed: 100,
            data_dir: None,
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub vit: ViTConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub mmd_variant: MmdVariant,
    /// Evaluate on the test set every this many epochs (0 = final only).
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vit: ViTConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            mmd_variant: MmdVariant::Standard,
            eval_every: 5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        self.train.validate()
    }

    /// Canonical text form; `parse` of the output reproduces the config.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str("# model\n");
        out.push_str(&vit_to_kv(&self.vit));
        out.push_str("\n# training\n");
        let t = &self.train;
        out.push_str(&format!("learning_rate = {}\n", t.learning_rate));
        out.push_str(&format!("total_epochs = {}\n", t.total_epochs));
        out.push_str(&format!("batch_size = {}\n", t.batch_size));
        out.push_str(&format!("weight_decay = {}\n", t.weight_decay));
        out.push_str(&format!("alpha0 = {}\n", t.alpha0));
        out.push_str(&format!("t0_fraction = {}\n", t.t0_fraction));
        out.push_str(&format!("knn_k = {}\n", t.knn_k));
        out.push_str(&format!("tau = {}\n", t.tau));
        out.push_str(&format!("prototype_multiplier = {}\n", t.prototype_multiplier));
        out.push_str(&format!("seed = {}\n", t.seed));
        out.push_str(&format!("data_fraction = {}\n", t.data_fraction));
        out.push_str(&format!(
            "ema_orientation = {}\n",
            match t.ema_orientation {
                EmaOrientation::Paper => "paper",
                EmaOrientation::Inverted => "inverted",
            }
        ));
        out.push_str(&format!(
            "mmd_variant = {}\n",
            match self.mmd_variant {
                MmdVariant::Standard => "standard",
                MmdVariant::Paper => "paper",
            }
        ));
        out.push_str(&format!("eval_every = {}\n", self.eval_every));
        out.push_str("\n# data\n");
        let d = &self.data;
        out.push_str(&format!(
            "generator = {}\n",
            match d.generator {
                Generator::Textures => "textures",
                Generator::GaussianBlobs => "gaussian-blobs",
            }
        ));
        out.push_str(&format!("samples_per_class = {}\n", d.samples_per_class));
        out.push_str(&format!(
            "test_samples_per_class = {}\n",
            d.test_samples_per_class
        ));
        out.push_str(&format!("noise_std = {}\n", d.noise_std));
        out.push_str(&format!("data_seed = {}\n", d.data_seed));
        if let Some(dir) = &d.data_dir {
            out.push_str(&format!("data_dir = {}\n", dir.display()));
        }
        out
    }

    /// Flat snapshot for run records.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        parse_kv_pairs(&self.to_kv())
            .expect("canonical form is well formed")
            .into_iter()
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_pairs(&parse_kv_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MovitError::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Applies `key = value` pairs on top of the current values.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs {
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                MovitError::Config(format!("invalid value `{value}` for key `{key}`"))
            })
        }
        match key {
            "image_size" => self.vit.image_size = num(key, value)?,
            "patch_size" => self.vit.patch_size = num(key, value)?,
            "in_channels" => self.vit.in_channels = num(key, value)?,
            "embed_dim" => self.vit.embed_dim = num(key, value)?,
            "depth" => self.vit.depth = num(key, value)?,
            "num_heads" => self.vit.num_heads = num(key, value)?,
            "mlp_ratio" => self.vit.mlp_ratio = num(key, value)?,
            "num_classes" => self.vit.num_classes = num(key, value)?,
            "movit_layer" => {
                self.vit.movit_layer = match value {
                    "none" | "off" => None,
                    v => Some(num(key, v)?),
                }
            }
            "cache_token" => self.vit.cache_token = value.parse()?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "total_epochs" => self.train.total_epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "weight_decay" => self.train.weight_decay = num(key, value)?,
            "alpha0" => self.train.alpha0 = num(key, value)?,
            "t0_fraction" => self.train.t0_fraction = num(key, value)?,
            "knn_k" => self.train.knn_k = num(key, value)?,
            "tau" => self.train.tau = num(key, value)?,
            "prototype_multiplier" => self.train.prototype_multiplier = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "data_fraction" => self.train.data_fraction = num(key, value)?,
            "ema_orientation" => self.train.ema_orientation = value.parse()?,
            "mmd_variant" => self.mmd_variant = value.parse()?,
            "eval_every" => self.eval_every = num(key, value)?,
            "generator" => self.data.generator = value.parse()?,
            "samples_per_class" => self.data.samples_per_class = num(key, value)?,
            "test_samples_per_class" => self.data.test_samples_per_class = num(key, value)?,
            "noise_std" => self.data.noise_std = num(key, value)?,
            "data_seed" => self.data.data_seed = num(key, value)?,
            "data_dir" => self.data.data_dir = Some(PathBuf::from(value)),
            other => {
                return Err(MovitError::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }
}

/// Model-only key/value form, embedded in checkpoints.
pub fn vit_to_kv(cfg: &ViTConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("image_size = {}\n", cfg.image_size));
    out.push_str(&format!("patch_size = {}\n", cfg.patch_size));
    out.push_str(&format!("in_channels = {}\n", cfg.in_channels));
    out.push_str(&format!("embed_dim = {}\n", cfg.embed_dim));
    out.push_str(&format!("depth = {}\n", cfg.depth));
    out.push_str(&format!("num_heads = {}\n", cfg.num_heads));
    out.push_str(&format!("mlp_ratio = {}\n", cfg.mlp_ratio));
    out.push_str(&format!("num_classes = {}\n", cfg.num_classes));
    out.push_str(&format!(
        "movit_layer = {}\n",
        cfg.movit_layer.map_or("none".to_string(), |l| l.to_string())
    ));
    out.push_str(&format!(
        "cache_token = {}\n",
        match cfg.cache_token {
            CacheToken::Cls => "cls",
            CacheToken::Mean => "mean",
        }
    ));
    out
}

pub fn vit_from_kv(text: &str) -> Result<ViTConfig> {
    let mut cfg = RunConfig::default();
    for (key, value) in parse_kv_pairs(text)? {
        cfg.apply(&key, &value)?;
    }
    Ok(cfg.vit)
}

/// Splits `key = value` lines; `#` starts a comment, blank lines skip.
pub fn parse_kv_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(MovitError::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_canonical_form() {
        let mut cfg = RunConfig::default();
        cfg.train.seed = 42;
        cfg.train.data_fraction = 0.25;
        cfg.vit.movit_layer = None;
        cfg.mmd_variant = MmdVariant::Paper;
        cfg.train.ema_orientation = EmaOrientation::Inverted;
        let parsed = RunConfig::parse(&cfg.to_kv()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("bogus_key = 3\n").unwrap_err();
        match err {
            MovitError::Config(msg) => assert!(msg.contains("bogus_key")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_value_is_named() {
        let err = RunConfig::parse("depth = banana\n").unwrap_err();
        match err {
            MovitError::Config(msg) => {
                assert!(msg.contains("banana") && msg.contains("depth"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let cfg = RunConfig::parse("# hello\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn vit_kv_round_trip() {
        let cfg = ViTConfig {
            movit_layer: None,
            cache_token: CacheToken::Mean,
            ..ViTConfig::default()
        };
        assert_eq!(vit_from_kv(&vit_to_kv(&cfg)).unwrap(), cfg);
    }
}
