//! Pipeline configuration file (TOML). Every section and key is optional.
//!
//! ```toml
//! seed = 7
//!
//! [tfidf]
//! max_features = 128
//!
//! [encoder]
//! vocab_size = 2000
//! init = "truncated_normal"
//!
//! [encoder.architecture]
//! num_layers = 4
//! hidden_size = 128
//!
//! [encoder.finetune]
//! epochs = 10
//!
//! [eval]
//! k = 5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::AnnotatorConfig;
use crate::encoder::{
    EncoderConfig, FinetuneConfig, InitScheme, PretrainConfig, DEFAULT_BATCH_SIZES, DEFAULT_LEARNING_RATES,
};
use crate::error::{Error, Result};
use crate::rules::KeywordTable;
use crate::synth::SynthConfig;
use crate::tfidf::{ForestHyper, LinearHyper, DEFAULT_MAX_FEATURES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfSettings {
    pub max_features: usize,
}

impl Default for TfidfSettings {
    fn default() -> Self {
        TfidfSettings {
            max_features: DEFAULT_MAX_FEATURES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub enabled: bool,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            enabled: false,
            batch_sizes: DEFAULT_BATCH_SIZES.to_vec(),
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    /// Target size of the subword vocabulary.
    pub vocab_size: usize,
    /// `vocab_size` inside is filled from the trained vocabulary.
    pub architecture: EncoderConfig,
    pub init: InitScheme,
    /// Masked-LM pretraining on the training texts before fine-tuning, when no
    /// pretrained checkpoint is supplied.
    pub pretrain: Option<PretrainConfig>,
    pub finetune: FinetuneConfig,
    pub grid: GridSettings,
    /// Re-initialize the top N layers before fine-tuning.
    pub reinit_top_n: Option<usize>,
    /// Scheme for re-initialized layers.
    pub reinit_scheme: InitScheme,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            vocab_size: 2000,
            architecture: EncoderConfig::default(),
            init: InitScheme::TruncatedNormal,
            pretrain: Some(PretrainConfig {
                epochs: 10,
                ..Default::default()
            }),
            finetune: FinetuneConfig::default(),
            grid: GridSettings::default(),
            reinit_top_n: None,
            reinit_scheme: InitScheme::TruncatedNormal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k: usize,
    pub holdout_per_class: usize,
    pub sizes: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: 5,
            holdout_per_class: 200,
            sizes: vec![50, 100, 200, 400, 800],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub per_class: usize,
    /// Compare word-level (merged) instead of piece-level attentions.
    pub merged: bool,
}

impl Default for DriftSettings {
    fn default() -> Self {
        DriftSettings {
            per_class: 1000,
            merged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub page_limit: Option<usize>,
    pub page_size: usize,
    pub retries: usize,
    pub max_parallel: usize,
    pub timeout_secs: u64,
    pub document_url: String,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            page_limit: None,
            page_size: 100,
            retries: 3,
            max_parallel: 4,
            timeout_secs: 30,
            document_url: crate::spl::HttpIndexSource::DAILYMED_DOCUMENT.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ingest: IngestSettings,
    pub annotator: AnnotatorConfig,
    pub rules: KeywordTable,
    pub tfidf: TfidfSettings,
    pub linear: LinearHyper,
    pub forest: ForestHyper,
    pub encoder: EncoderSettings,
    pub eval: EvalSettings,
    pub drift: DriftSettings,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Snapshot embedded in reports.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.rules.validate()?;
        if self.tfidf.max_features == 0 {
            return Err(Error::Config("tfidf.max_features must be positive".into()));
        }
        if self.eval.k < 2 {
            return Err(Error::Config("eval.k must be at least 2".into()));
        }
        let mut arch = self.encoder.architecture.clone();
        arch.vocab_size = self.encoder.vocab_size;
        arch.validate()?;
        if matches!(self.encoder.reinit_scheme, InitScheme::Load(_)) {
            return Err(Error::Config("encoder.reinit_scheme must be a sampling scheme".into()));
        }
        self.synth.validate()?;
        if let Some(n) = self.encoder.reinit_top_n {
            if n > arch.num_layers {
                return Err(Error::Config(format!(
                    "encoder.reinit_top_n = {n} exceeds {} layers",
                    arch.num_layers
                )));
            }
        }
        if let Some(n) = self.encoder.finetune.freeze_top_n {
            if n > arch.num_layers {
                return Err(Error::Config(format!(
                    "encoder.finetune.freeze_top_n = {n} exceeds {} layers",
                    arch.num_layers
                )));
            }
        }
        Ok(())
    }
}
