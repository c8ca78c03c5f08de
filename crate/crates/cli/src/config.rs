//! Run configuration: a JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use letsne::{EmbedMode, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ColorBy {
    Label,
    Region,
    /// Bins the first embedding coordinate into the palette.
    Component,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Blobs,
    Swissroll,
    /// Hyperspectral cube with four quadrant classes.
    Blocks,
}

/// Every setting any subcommand reads. Unset fields fall back to the
/// subcommand's defaults; unknown keys in a config file are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<EmbedMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    /// Hide the labels of the evaluation test split while training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hide_test_labels: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_regions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compactness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svm_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svm_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_dims: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_by: Option<ColorBy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_size: Option<f64>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SynthKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(self, flags: RunConfig) -> Self {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let top = serde_json::to_value(flags).expect("config serializes");
        if let (Value::Object(b), Value::Object(t)) = (&mut base, top) {
            b.extend(t);
        }
        serde_json::from_value(base).expect("overlay of valid configs is valid")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("letsne-out"))
    }

    pub fn require_input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::Usage("missing required setting `input`".into()))
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(0.7)
    }

    /// Training hyperparameters: mode defaults, then any explicit settings.
    pub fn train_config(&self) -> TrainConfig {
        let mode = self.mode.unwrap_or(EmbedMode::Visualization);
        let mut c = TrainConfig::for_mode(mode);
        c.seed = self.seed();
        if let Some(v) = self.cf {
            c.cf = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.perplexity {
            c.perplexity = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.dims {
            c.embedding_dim = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = &self.hidden {
            c.hidden = v.clone();
        }
        if let Some(v) = self.learning_rate {
            c.adam.lr = v;
        }
        c
    }

    /// Writes the resolved training settings back so a manifest can be fed
    /// to `--config` for an exact re-run.
    pub fn with_train_config(mut self, c: &TrainConfig) -> Self {
        self.mode = Some(c.mode);
        self.cf = Some(c.cf);
        self.lambda = Some(c.lambda);
        self.perplexity = Some(c.perplexity);
        self.k = Some(c.k);
        self.dims = Some(c.embedding_dim);
        self.epochs = Some(c.epochs);
        self.batch_size = Some(c.batch_size);
        self.hidden = Some(c.hidden.clone());
        self.learning_rate = Some(c.adam.lr);
        self.seed = Some(c.seed);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: RunConfig = serde_json::from_str(r#"{"cf": 5.0, "epochs": 3, "mode": "labelled"}"#).unwrap();
        let flags = RunConfig {
            cf: Some(200.0),
            ..RunConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.cf, Some(200.0));
        assert_eq!(merged.epochs, Some(3));
        assert_eq!(merged.train_config().mode, EmbedMode::Labelled);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"cff": 5.0}"#).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig {
            mode: Some(EmbedMode::Region),
            ..RunConfig::default()
        };
        let tc = c.train_config();
        let back = c.clone().with_train_config(&tc);
        assert_eq!(back.train_config(), tc);
        let json = serde_json::to_string(&back).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), back);
    }
}
