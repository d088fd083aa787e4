//! JSON run configuration.
//!
//! ```json
//! {
//!   "train_manifest": "data/train/manifest.csv",
//!   "val_manifest": "data/val/manifest.csv",
//!   "test_sets": [{"name": "heldout", "manifest": "data/test/manifest.csv"}],
//!   "vocabulary": "vocab.txt",
//!   "out_dir": "runs/toy",
//!   "train": {"epochs": 150, "batch_size": 8},
//!   "model": {"conv_filters": 8, "rnn_layers": 1, "rnn_units": 32},
//!   "features": {"frame_length": 128, "frame_step": 80, "fft_length": 128}
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. `vocabulary` may be omitted to use the default character set, and
//! `model.vocab_size_with_blank` / `model.feature_bins` may be omitted to
//! derive them from the vocabulary and feature settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::features::FeatureParams;
use crate::net::ModelConfig;
use crate::textmap::Vocabulary;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    pub name: String,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    #[serde(default)]
    pub test_sets: Vec<TestSet>,
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: PartialModel,
    #[serde(default)]
    pub features: FeatureParams,
}

/// Model section in which the two derived sizes are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartialModel {
    pub conv_filters: usize,
    pub conv1_kernel: (usize, usize),
    pub conv1_stride: (usize, usize),
    pub conv2_kernel: (usize, usize),
    pub conv2_stride: (usize, usize),
    pub rnn_layers: usize,
    pub rnn_units: usize,
    pub rnn_bidirectional: bool,
    pub dropout_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size_with_blank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_bins: Option<usize>,
}

impl Default for PartialModel {
    fn default() -> Self {
        Self::from(&ModelConfig::default())
    }
}

impl From<&ModelConfig> for PartialModel {
    fn from(m: &ModelConfig) -> Self {
        Self {
            conv_filters: m.conv_filters,
            conv1_kernel: m.conv1_kernel,
            conv1_stride: m.conv1_stride,
            conv2_kernel: m.conv2_kernel,
            conv2_stride: m.conv2_stride,
            rnn_layers: m.rnn_layers,
            rnn_units: m.rnn_units,
            rnn_bidirectional: m.rnn_bidirectional,
            dropout_rate: m.dropout_rate,
            vocab_size_with_blank: None,
            feature_bins: None,
        }
    }
}

impl PartialModel {
    /// Fills in the derived sizes, rejecting explicit values that disagree.
    pub fn resolve(
        &self,
        vocab: &Vocabulary,
        features: &FeatureParams,
    ) -> Result<ModelConfig, CliError> {
        let classes = vocab.num_classes();
        let bins = features.num_bins();
        if let Some(k) = self.vocab_size_with_blank.filter(|&k| k != classes) {
            return Err(CliError::Config(format!(
                "model.vocab_size_with_blank is {k} but the vocabulary needs {classes}"
            )));
        }
        if let Some(f) = self.feature_bins.filter(|&f| f != bins) {
            return Err(CliError::Config(format!(
                "model.feature_bins is {f} but the feature settings give {bins}"
            )));
        }
        let m = ModelConfig {
            conv_filters: self.conv_filters,
            conv1_kernel: self.conv1_kernel,
            conv1_stride: self.conv1_stride,
            conv2_kernel: self.conv2_kernel,
            conv2_stride: self.conv2_stride,
            rnn_layers: self.rnn_layers,
            rnn_units: self.rnn_units,
            rnn_bidirectional: self.rnn_bidirectional,
            dropout_rate: self.dropout_rate,
            vocab_size_with_blank: classes,
            feature_bins: bins,
        };
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }
}

/// Feature settings for the synthetic tone corpus at 8 kHz.
pub fn toy_features() -> FeatureParams {
    FeatureParams {
        frame_length: 128,
        frame_step: 80,
        fft_length: 128,
        sample_rate: 8000,
        ..FeatureParams::default()
    }
}

/// Small model used for desk-scale experiments.
pub fn toy_model() -> PartialModel {
    PartialModel {
        conv_filters: 8,
        rnn_layers: 1,
        rnn_units: 32,
        ..PartialModel::default()
    }
}

impl RunConfig {
    /// Toy setup matching the synthetic corpus defaults.
    pub fn toy(
        train_manifest: &Path,
        val_manifest: &Path,
        vocabulary: &Path,
        out_dir: &Path,
    ) -> Self {
        Self {
            train_manifest: train_manifest.to_path_buf(),
            val_manifest: val_manifest.to_path_buf(),
            test_sets: Vec::new(),
            vocabulary: Some(vocabulary.to_path_buf()),
            out_dir: out_dir.to_path_buf(),
            train: TrainConfig {
                batch_size: 8,
                checkpoint_every: 50,
                ..TrainConfig::default()
            },
            model: toy_model(),
            features: toy_features(),
        }
    }

    /// Parses a config file; errors carry `path:line:column`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_manifest);
        fix(&mut self.val_manifest);
        fix(&mut self.out_dir);
        if let Some(v) = self.vocabulary.as_mut() {
            fix(v);
        }
        for t in &mut self.test_sets {
            fix(&mut t.manifest);
        }
    }

    /// Every input path that must exist before a run starts.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        let inputs = [&self.train_manifest, &self.val_manifest]
            .into_iter()
            .chain(self.vocabulary.as_ref())
            .chain(self.test_sets.iter().map(|t| &t.manifest));
        for p in inputs {
            if !p.is_file() {
                return Err(CliError::Io(format!("{}: file not found", p.display())));
            }
        }
        Ok(())
    }

    pub fn load_vocabulary(&self) -> Result<Vocabulary, CliError> {
        match &self.vocabulary {
            Some(p) => {
                Vocabulary::load(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
            None => Ok(Vocabulary::default()),
        }
    }

    /// Validates every section and returns the concrete model config.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<ModelConfig, CliError> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.features
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model.resolve(vocab, &self.features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}
