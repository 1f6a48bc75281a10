//! Run configuration file: one JSON document with `encoder`, `train`,
//! `data`, `loss` and `analysis` sections. Every field has a default;
//! unknown keys are rejected. Command-line flags override file values,
//! and every run copies its fully resolved configuration next to its
//! outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pfdfl_core::data::SyntheticSpec;
use pfdfl_core::encoder::EncoderConfig;
use pfdfl_core::model::{LossWeights, ModelConfig, ModelVariant};
use pfdfl_core::train::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub loss: LossSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    /// Projection width D'; null means D.
    pub d_proj: Option<usize>,
    pub projection_bias: bool,
    pub shared_fusion: bool,
    pub head_dropout: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 32,
            dropout_p: 0.1,
            d_proj: None,
            projection_bias: true,
            shared_fusion: false,
            head_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub variant: String,
    pub alpha: f64,
    pub save_checkpoints: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            accumulation_steps: d.accumulation_steps,
            lr_start: d.lr_start,
            lr_min: d.lr_min,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            adam_epsilon: d.adam_epsilon,
            seed: d.seed,
            variant: d.variant.as_str().to_string(),
            alpha: d.alpha,
            save_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub template: String,
    pub pairs: usize,
    pub vocab: usize,
    pub knowledge_len: usize,
    pub response_len: usize,
    pub corrupt: usize,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        DataSection {
            template: "qa".to_string(),
            pairs: d.n_pairs,
            vocab: d.vocab_words,
            knowledge_len: d.knowledge_len,
            response_len: d.response_len,
            corrupt: d.corrupt_count,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub hall: f64,
    pub correct: f64,
    pub diff: f64,
    pub contrastive: f64,
    pub margin: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossWeights::default();
        LossSection {
            hall: d.hall,
            correct: d.correct,
            diff: d.diff,
            contrastive: d.contrastive,
            margin: d.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Retention ratios for the sweep command.
    pub ratios: Vec<f64>,
    /// Sequence length for complexity estimates; null means max_len.
    pub seq_len: Option<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            ratios: vec![0.8, 0.5, 0.2, 0.05, 0.01],
            seq_len: None,
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<RunConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfigFile> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfigFile::default()),
        }
    }

    /// Applies command-line overrides (flags win over file values).
    pub fn apply_overrides(
        &mut self,
        variant: Option<&str>,
        alpha: Option<f64>,
        seed: Option<u64>,
    ) -> Result<()> {
        if let Some(v) = variant {
            ModelVariant::parse(v).map_err(CliError::from)?;
            self.train.variant = v.to_string();
        }
        if let Some(a) = alpha {
            self.train.alpha = a;
        }
        if let Some(s) = seed {
            self.train.seed = s;
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<ModelVariant> {
        ModelVariant::parse(&self.train.variant).map_err(CliError::from)
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.encoder.d_model,
            n_layers: self.encoder.n_layers,
            n_heads: self.encoder.n_heads,
            d_ff: self.encoder.d_ff,
            max_len: self.encoder.max_len,
            dropout_p: self.encoder.dropout_p,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(self.encoder_config(vocab_size), self.variant()?);
        cfg.d_proj = self.encoder.d_proj;
        cfg.projection_bias = self.encoder.projection_bias;
        cfg.shared_fusion = self.encoder.shared_fusion;
        cfg.head_dropout = self.encoder.head_dropout;
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            accumulation_steps: self.train.accumulation_steps,
            lr_start: self.train.lr_start,
            lr_min: self.train.lr_min,
            weight_decay: self.train.weight_decay,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_epsilon: self.train.adam_epsilon,
            seed: self.train.seed,
            variant: self.variant()?,
            alpha: self.train.alpha,
            loss: LossWeights {
                hall: self.loss.hall,
                correct: self.loss.correct,
                diff: self.loss.diff,
                contrastive: self.loss.contrastive,
                margin: self.loss.margin,
            },
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }
}
