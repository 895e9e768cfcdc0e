//! Trainers for every model kind and the saved model artifact.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{EncoderSettings, PipelineConfig};
use crate::encoder::{
    finetune, grid_search_finetune, init_params, predict, pretrain_mlm, reinit_top_layers, train_subword_vocab,
    Checkpoint, Encoding, FinetuneConfig, InitScheme, PretrainConfig, SubwordVocab,
};
use crate::error::{Error, Result};
use crate::eval::{Example, Predictor, Trainer};
use crate::rng::derive_seed;
use crate::rules::{KeywordTable, RuleClassifier};
use crate::tfidf::{
    fit_tfidf, stack, tokenize_words, train_linear_svm, train_logistic, train_random_forest, Classifier,
    ForestHyper, ForestModel, LinearHyper, LinearModel, TfidfModel,
};
use crate::topic::Topic;

pub const MODEL_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rule,
    Logreg,
    Svm,
    Forest,
    Encoder,
    /// Predicts the gold label; a harness sanity check.
    Oracle,
    /// Always predicts Other.
    Constant,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Rule,
        ModelKind::Logreg,
        ModelKind::Svm,
        ModelKind::Forest,
        ModelKind::Encoder,
        ModelKind::Oracle,
        ModelKind::Constant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rule => "rule",
            ModelKind::Logreg => "logreg",
            ModelKind::Svm => "svm",
            ModelKind::Forest => "forest",
            ModelKind::Encoder => "encoder",
            ModelKind::Oracle => "oracle",
            ModelKind::Constant => "constant",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// A trained model of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelArtifact {
    Rule {
        table: KeywordTable,
        seed: u64,
    },
    Linear {
        tfidf: TfidfModel,
        model: LinearModel,
    },
    Forest {
        tfidf: TfidfModel,
        model: ForestModel,
    },
    Encoder {
        checkpoint: Box<Checkpoint>,
    },
    Oracle,
    Constant {
        topic: Topic,
    },
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format_version: u32,
    model: ModelArtifact,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let saved = SavedModel {
            format_version: MODEL_FORMAT,
            model: self.clone(),
        };
        let bytes = serde_json::to_vec(&saved)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel =
            serde_json::from_slice(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        if saved.format_version != MODEL_FORMAT {
            return Err(Error::Load(format!(
                "{}: unsupported model format {}",
                path.display(),
                saved.format_version
            )));
        }
        Ok(match saved.model {
            ModelArtifact::Linear { tfidf, model } => ModelArtifact::Linear {
                tfidf: tfidf.reindex(),
                model,
            },
            ModelArtifact::Forest { tfidf, model } => ModelArtifact::Forest {
                tfidf: tfidf.reindex(),
                model,
            },
            ModelArtifact::Encoder { checkpoint } => {
                let vocab = checkpoint.vocab.clone().reindex()?;
                ModelArtifact::Encoder {
                    checkpoint: Box::new(Checkpoint { vocab, ..*checkpoint }),
                }
            }
            other => other,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelArtifact::Rule { .. } => "rule",
            ModelArtifact::Linear { model, .. } => match model.kind {
                crate::tfidf::LinearKind::Logistic => "logreg",
                crate::tfidf::LinearKind::Svm => "svm",
            },
            ModelArtifact::Forest { .. } => "forest",
            ModelArtifact::Encoder { .. } => "encoder",
            ModelArtifact::Oracle => "oracle",
            ModelArtifact::Constant { .. } => "constant",
        }
    }

    pub fn predict_texts(&self, texts: &[String]) -> Result<Vec<Topic>> {
        let examples: Vec<Example> = texts.iter().map(|t| Example::new(t.clone(), Topic::Other)).collect();
        match self {
            ModelArtifact::Oracle => Err(Error::Config("the oracle model needs gold labels".into())),
            _ => self.predict(&examples),
        }
    }
}

impl Predictor for ModelArtifact {
    fn predict(&self, examples: &[Example]) -> Result<Vec<Topic>> {
        match self {
            ModelArtifact::Rule { table, seed } => {
                let rc = RuleClassifier::new(table.clone(), *seed)?;
                Ok(examples.iter().map(|e| rc.classify(&e.text)).collect())
            }
            ModelArtifact::Linear { tfidf, model } => examples
                .iter()
                .map(|e| model.predict(&tfidf.transform_text(&e.text)))
                .collect(),
            ModelArtifact::Forest { tfidf, model } => examples
                .iter()
                .map(|e| model.predict(&tfidf.transform_text(&e.text)))
                .collect(),
            ModelArtifact::Encoder { checkpoint } => {
                let max = checkpoint.config.max_seq_len;
                let encs: Vec<Encoding> = examples.iter().map(|e| checkpoint.vocab.encode(&e.text, max)).collect();
                predict(&checkpoint.params(), &encs)
            }
            ModelArtifact::Oracle => Ok(examples.iter().map(|e| e.label).collect()),
            ModelArtifact::Constant { topic } => Ok(vec![*topic; examples.len()]),
        }
    }
}

fn tfidf_fit(train: &[Example], max_features: usize) -> Result<(TfidfModel, ndarray::Array2<f64>, Vec<Topic>)> {
    let docs: Vec<Vec<String>> = train.iter().map(|e| tokenize_words(&e.text)).collect();
    let tfidf = fit_tfidf(&docs, max_features)?;
    let x = stack(&docs.iter().map(|d| tfidf.transform(d)).collect::<Vec<_>>())?;
    let y = train.iter().map(|e| e.label).collect();
    Ok((tfidf, x, y))
}

/// Trainer for the rule, TF-IDF and sanity models.
#[derive(Clone, Debug)]
pub struct BasicTrainer {
    pub kind: ModelKind,
    pub rules: KeywordTable,
    pub max_features: usize,
    pub linear: LinearHyper,
    pub forest: ForestHyper,
}

impl BasicTrainer {
    pub fn new(kind: ModelKind, cfg: &PipelineConfig) -> Self {
        BasicTrainer {
            kind,
            rules: cfg.rules.clone(),
            max_features: cfg.tfidf.max_features,
            linear: cfg.linear,
            forest: cfg.forest.clone(),
        }
    }

    pub fn fit_artifact(&self, train: &[Example], seed: u64) -> Result<ModelArtifact> {
        match self.kind {
            ModelKind::Rule => {
                self.rules.validate()?;
                Ok(ModelArtifact::Rule {
                    table: self.rules.clone(),
                    seed,
                })
            }
            ModelKind::Logreg | ModelKind::Svm => {
                let (tfidf, x, y) = tfidf_fit(train, self.max_features)?;
                let hyper = LinearHyper { seed, ..self.linear };
                let model = if self.kind == ModelKind::Logreg {
                    train_logistic(&x, &y, &hyper)?.0
                } else {
                    train_linear_svm(&x, &y, &hyper)?
                };
                Ok(ModelArtifact::Linear { tfidf, model })
            }
            ModelKind::Forest => {
                let (tfidf, x, y) = tfidf_fit(train, self.max_features)?;
                let hyper = ForestHyper {
                    seed,
                    ..self.forest.clone()
                };
                Ok(ModelArtifact::Forest {
                    tfidf,
                    model: train_random_forest(&x, &y, &hyper)?,
                })
            }
            ModelKind::Oracle => Ok(ModelArtifact::Oracle),
            ModelKind::Constant => Ok(ModelArtifact::Constant { topic: Topic::Other }),
            ModelKind::Encoder => Err(Error::Config("use EncoderTrainer for the encoder".into())),
        }
    }
}

impl Trainer for BasicTrainer {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn fit(&self, train: &[Example], _validation: &[Example], seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_artifact(train, seed)?))
    }
}

/// Encoder trainer: build a vocabulary, initialize, optionally pretrain with
/// masked-LM on the training texts plus `unlabeled`, then fine-tune with
/// validation-based epoch selection (and grid search when enabled).
#[derive(Clone, Debug)]
pub struct EncoderTrainer {
    pub settings: EncoderSettings,
    pub pretrained: Option<Checkpoint>,
    pub unlabeled: Vec<String>,
}

impl EncoderTrainer {
    pub fn new(settings: EncoderSettings) -> Self {
        EncoderTrainer {
            settings,
            pretrained: None,
            unlabeled: Vec::new(),
        }
    }

    fn starting_point(&self, train: &[Example], seed: u64) -> Result<(SubwordVocab, crate::encoder::EncoderParams)> {
        if let Some(ck) = &self.pretrained {
            return Ok((ck.vocab.clone(), ck.params()));
        }
        let s = &self.settings;
        if let InitScheme::Load(path) = &s.init {
            let ck = Checkpoint::load(path)?;
            return Ok((ck.vocab.clone(), ck.params()));
        }
        let texts: Vec<String> = train.iter().map(|e| e.text.clone()).chain(self.unlabeled.iter().cloned()).collect();
        let vocab = train_subword_vocab(&texts, s.vocab_size)?;
        let mut cfg = s.architecture.clone();
        cfg.vocab_size = vocab.len();
        let mut params = init_params(&cfg, &s.init, derive_seed(seed, 1))?;
        if let Some(pc) = &s.pretrain {
            let corpus: Vec<Encoding> = texts.iter().map(|t| vocab.encode(t, cfg.max_seq_len)).collect();
            let pc = PretrainConfig {
                seed: derive_seed(seed, 2),
                ..pc.clone()
            };
            params = pretrain_mlm(&params, &corpus, &pc)?.0;
        }
        Ok((vocab, params))
    }

    pub fn fit_checkpoint(&self, train: &[Example], validation: &[Example], seed: u64) -> Result<Checkpoint> {
        let s = &self.settings;
        let (vocab, mut params) = self.starting_point(train, seed)?;
        if let Some(n) = s.reinit_top_n {
            params = reinit_top_layers(&params, n, &s.reinit_scheme, derive_seed(seed, 3))?;
        }
        let max = params.config.max_seq_len;
        let enc = |xs: &[Example]| -> Vec<(Encoding, Topic)> {
            xs.iter().map(|e| (vocab.encode(&e.text, max), e.label)).collect()
        };
        let (tr, va) = (enc(train), enc(validation));
        let mut ft = FinetuneConfig {
            seed: derive_seed(seed, 4),
            ..s.finetune.clone()
        };
        if s.grid.enabled && !va.is_empty() {
            let g = grid_search_finetune(&params, &tr, &va, &s.grid.batch_sizes, &s.grid.learning_rates, &ft)?;
            ft.batch_size = g.best.batch_size;
            ft.learning_rate = g.best.learning_rate;
        }
        let val = (!va.is_empty()).then_some(va.as_slice());
        let (params, _) = finetune(&params, &tr, val, &ft)?;
        Checkpoint::new(&params, &vocab, None)
    }
}

impl Trainer for EncoderTrainer {
    fn name(&self) -> String {
        "encoder".into()
    }

    fn fit(&self, train: &[Example], validation: &[Example], seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(ModelArtifact::Encoder {
            checkpoint: Box::new(self.fit_checkpoint(train, validation, seed)?),
        }))
    }
}

/// Trainer for `kind` configured from `cfg`.
pub fn trainer_for(
    kind: ModelKind,
    cfg: &PipelineConfig,
    pretrained: Option<Checkpoint>,
    unlabeled: Vec<String>,
) -> Box<dyn Trainer> {
    match kind {
        ModelKind::Encoder => Box::new(EncoderTrainer {
            settings: cfg.encoder.clone(),
            pretrained,
            unlabeled,
        }),
        k => Box::new(BasicTrainer::new(k, cfg)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn data() -> Vec<Example> {
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(Example::new(format!("drug absorbed rapidly after oral dose {i}"), Topic::Absorption));
            v.push(Example::new(format!("drug excreted in urine unchanged {i}"), Topic::Excretion));
            v.push(Example::new(format!("clinical studies were performed {i}"), Topic::Other));
        }
        v
    }

    #[test]
    fn parse_kinds() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("bert".parse::<ModelKind>().is_err());
    }

    #[test]
    fn artifacts_round_trip() {
        let cfg = PipelineConfig::default();
        let d = data();
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModelKind::Rule, ModelKind::Logreg, ModelKind::Svm, ModelKind::Forest, ModelKind::Constant] {
            let t = BasicTrainer::new(kind, &cfg);
            let a = t.fit_artifact(&d, 3).unwrap();
            let path = dir.path().join(format!("{kind}.json"));
            a.save(&path).unwrap();
            let b = ModelArtifact::load(&path).unwrap();
            assert_eq!(a.predict(&d).unwrap(), b.predict(&d).unwrap());
            assert_eq!(b.kind_name(), kind.as_str());
        }
        let lr = BasicTrainer::new(ModelKind::Logreg, &cfg).fit_artifact(&d, 0).unwrap();
        let preds = lr.predict(&d).unwrap();
        assert_eq!(crate::eval::accuracy(&preds, &d.iter().map(|e| e.label).collect::<Vec<_>>()), 1.0);
    }

    #[test]
    fn small_encoder_trains() {
        let mut settings = EncoderSettings {
            vocab_size: 120,
            architecture: EncoderConfig {
                num_layers: 1,
                num_heads: 2,
                hidden_size: 16,
                ffn_size: 32,
                max_seq_len: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        settings.pretrain = Some(PretrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        });
        settings.finetune = FinetuneConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 5e-3,
            ..Default::default()
        };
        let t = EncoderTrainer::new(settings);
        let d = data();
        let ck = t.fit_checkpoint(&d, &d, 1).unwrap();
        let art = ModelArtifact::Encoder { checkpoint: Box::new(ck) };
        let golds: Vec<Topic> = d.iter().map(|e| e.label).collect();
        assert!(crate::eval::accuracy(&art.predict(&d).unwrap(), &golds) > 0.9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.json");
        art.save(&p).unwrap();
        assert_eq!(ModelArtifact::load(&p).unwrap().predict(&d).unwrap(), art.predict(&d).unwrap());
    }
}
