//! Flat JSON run configuration. CLI `--key value` pairs override file values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::ModelConfig;
use crate::data::{CutType, GenConfig, ShapeType};
use crate::losses::LossWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // paths
    pub dataset_dir: String,
    pub eval_dataset_dir: String,
    pub checkpoint_dir: String,
    pub resume_from: String,
    pub eval_export_dir: String,
    // reproducibility
    pub seed: u64,
    // dataset generation
    pub samples: usize,
    pub whole_points: usize,
    pub part_points: usize,
    pub min_part_points: usize,
    pub parts_min: usize,
    pub parts_max: usize,
    pub shapes: Vec<ShapeType>,
    pub cuts: Vec<CutType>,
    pub translation_range: f32,
    // model
    pub feature_dim: usize,
    pub knn: usize,
    pub encoder_channels: Vec<usize>,
    pub head_hidden: usize,
    pub decoder_hidden: usize,
    pub leaky_slope: f32,
    pub use_correlation: bool,
    pub scramble_vn: bool,
    pub disc_points: usize,
    // training; the source benchmarks train with batch 32/48 on 41k cuts for
    // 80-120 epochs - these are desk-scale stand-ins
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub lambda_rot: f32,
    pub lambda_trans: f32,
    pub lambda_point: f32,
    pub lambda_recon: f32,
    pub lambda_embed: f32,
    pub lambda_adv: f32,
    pub checkpoint_interval: usize,
    pub pa_threshold: f32,
    /// Global gradient-norm clip per optimizer step; 0 disables.
    pub grad_clip: f32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dataset_dir: "data/train".to_string(),
            eval_dataset_dir: String::new(),
            checkpoint_dir: "checkpoints".to_string(),
            resume_from: String::new(),
            eval_export_dir: String::new(),
            seed: 42,
            samples: 2000,
            whole_points: 4096,
            part_points: 512,
            min_part_points: 64,
            parts_min: 2,
            parts_max: 2,
            shapes: vec![
                ShapeType::Sphere,
                ShapeType::Box,
                ShapeType::Cylinder,
                ShapeType::Ellipsoid,
            ],
            cuts: vec![
                CutType::Planar,
                CutType::Sine,
                CutType::Parabolic,
                CutType::Square,
            ],
            translation_range: 0.5,
            feature_dim: 64,
            knn: 16,
            encoder_channels: vec![32, 32, 64],
            head_hidden: 256,
            decoder_hidden: 512,
            leaky_slope: 0.2,
            use_correlation: true,
            scramble_vn: false,
            disc_points: 1024,
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-4,
            lambda_rot: 1.0,
            lambda_trans: 1.0,
            lambda_point: 10.0,
            lambda_recon: 1.0,
            lambda_embed: 0.1,
            lambda_adv: 0.05,
            checkpoint_interval: 10,
            pa_threshold: crate::metrics::PA_THRESHOLD,
            grad_clip: 10.0,
        }
    }
}

impl Config {
    pub fn load(path: &str) -> Result<Config, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        let config: Config = serde_json::from_str(&body).map_err(|source| ConfigError::Json {
            path: path.to_string(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Apply one `key value` override; the value is parsed as JSON when
    /// possible and as a bare string otherwise.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let obj = tree.as_object_mut().expect("config is a flat object");
        if !obj.contains_key(key) {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
            });
        }
        let parsed = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(key.to_string(), parsed);
        *self = serde_json::from_value(tree).map_err(|e| ConfigError::BadValue {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epochs < 1 {
            return Err(ConfigError::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::Invalid("batch_size must be >= 1".into()));
        }
        if self.encoder_channels.len() != 3 {
            return Err(ConfigError::Invalid(format!(
                "encoder_channels must list 3 widths, got {:?}",
                self.encoder_channels
            )));
        }
        if self.parts_min < 2 || self.parts_max < self.parts_min {
            return Err(ConfigError::Invalid(format!(
                "parts range [{}, {}] invalid (need 2 <= min <= max)",
                self.parts_min, self.parts_max
            )));
        }
        self.loss_weights()
            .validate()
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn require_dir(&self, path: &str, what: &str) -> Result<(), ConfigError> {
        if !Path::new(path).is_dir() {
            return Err(ConfigError::Invalid(format!(
                "{what} directory {path:?} does not exist"
            )));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rot: self.lambda_rot,
            trans: self.lambda_trans,
            point: self.lambda_point,
            recon: self.lambda_recon,
            embed: self.lambda_embed,
            adv: self.lambda_adv,
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            samples: self.samples,
            seed: self.seed,
            whole_points: self.whole_points,
            part_points: self.part_points,
            min_part_points: self.min_part_points,
            parts_min: self.parts_min,
            parts_max: self.parts_max,
            shapes: self.shapes.clone(),
            cuts: self.cuts.clone(),
            translation_range: self.translation_range,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            knn: self.knn,
            points_per_part: self.part_points,
            encoder_channels: [
                self.encoder_channels[0],
                self.encoder_channels[1],
                self.encoder_channels[2],
            ],
            head_hidden: self.head_hidden,
            decoder_hidden: self.decoder_hidden,
            leaky_slope: self.leaky_slope,
            use_correlation: self.use_correlation,
            scramble_vn: self.scramble_vn,
        }
    }
}
