//! Experiment description, one-to-one with its JSON file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{PeakPickParams, DEFAULT_TOLERANCE};
use crate::model::{FreezeConfig, Variant};
use crate::synth::CorpusSpec;
use crate::train::{FinetuneConfig, DEFAULT_BASE_LR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Rendered in memory from the spec.
    Synthetic(CorpusSpec),
    /// Directory written by `generate_corpus`.
    Manifest(PathBuf),
    /// `<root>/<Instrument>/<Instrument>_<nn>.wav` layout.
    Dataset(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnippetConfig {
    /// 1-based number of the file the snippet is cut from.
    pub file_index: usize,
    /// Start in seconds; `None` picks the earliest window holding an onset.
    pub offset: Option<f64>,
    pub duration: f64,
}

impl Default for SnippetConfig {
    fn default() -> Self {
        SnippetConfig {
            file_index: 1,
            offset: None,
            duration: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Onsets,
    Beats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Files are cut into sequences of this length.
    pub segment_seconds: f64,
    /// Instruments kept out of pretraining.
    pub exclude: Vec<String>,
    pub targets: TargetKind,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 4,
            learning_rate: DEFAULT_BASE_LR,
            segment_seconds: 5.0,
            exclude: Vec::new(),
            targets: TargetKind::Onsets,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub models: Vec<Variant>,
    /// Instruments to adapt to; all corpus instruments when `None`.
    pub instruments: Option<Vec<String>>,
    pub freeze_configs: Vec<FreezeConfig>,
    pub snippet: SnippetConfig,
    /// `freeze` and `seed` are set per grid row.
    pub finetune: FinetuneConfig,
    pub peak_pick: PeakPickParams,
    pub tolerance: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Pretrained model file per variant; missing variants are pretrained.
    pub base_models: BTreeMap<Variant, PathBuf>,
    pub pretrain: PretrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSource::Synthetic(CorpusSpec::standard(0)),
            models: Variant::ALL.to_vec(),
            instruments: None,
            freeze_configs: FreezeConfig::canonical(),
            snippet: SnippetConfig::default(),
            finetune: FinetuneConfig::default(),
            peak_pick: PeakPickParams::default(),
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            output_dir: None,
            base_models: BTreeMap::new(),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.freeze_configs.is_empty() {
            return Err(Error::Config("no freeze configurations selected".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.snippet.duration > 0.0) || self.snippet.file_index == 0 {
            return Err(Error::Config("snippet needs a positive duration and a 1-based file index".into()));
        }
        self.finetune.validate()?;
        self.peak_pick.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
