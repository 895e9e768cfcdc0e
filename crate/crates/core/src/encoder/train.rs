use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{accumulate_gradients, forward, softmax, Objective};
use super::optim::{learning_rate_at, AdamW, AdamWConfig};
use super::params::{EncoderParams, FreezeFlags, ParamGroup, Weights};
use super::vocab::{Encoding, MASK, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::rng::{derive_seed, seeded};
use crate::topic::Topic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub split: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<MetricRecord>,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation macro-F1 per epoch, when a validation set was given.
    pub val_macro_f1: Vec<f64>,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

/// Write the metrics log as one JSON object per line.
pub fn write_metrics_log(path: &Path, history: &TrainHistory) -> Result<()> {
    crate::corpus::write_jsonl(path, &history.records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mask_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_fraction: 0.15,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Train only the top N layers plus the head; `Some(0)` is head only.
    pub freeze_top_n: Option<usize>,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            batch_size: 16,
            learning_rate: 5e-5,
            epochs: 10,
            freeze_top_n: None,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

/// Masked-LM corruption of one sequence: returns the corrupted ids and the
/// (position, original id) targets.
pub fn mask_tokens(enc: &Encoding, fraction: f64, vocab_size: usize, rng: &mut crate::rng::Rng) -> (Vec<u32>, Vec<(usize, u32)>) {
    let candidates: Vec<usize> = (0..enc.ids.len())
        .filter(|&i| enc.attention_mask[i] == 1 && enc.ids[i] as usize >= NUM_SPECIALS)
        .collect();
    let mut ids = enc.ids.clone();
    if candidates.is_empty() {
        return (ids, Vec::new());
    }
    let k = ((fraction * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    let mut picked: Vec<usize> = index::sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    picked.sort_unstable();
    let mut targets = Vec::with_capacity(k);
    for pos in picked {
        targets.push((pos, ids[pos]));
        let r: f64 = rng.gen();
        if r < 0.8 {
            ids[pos] = MASK;
        } else if r < 0.9 {
            ids[pos] = rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32);
        }
    }
    (ids, targets)
}

struct StepOutcome {
    loss: f64,
    grads: Weights,
}

/// Per-example gradients in parallel, summed in example order.
fn batch_gradients(
    params: &EncoderParams,
    items: &[(Vec<u32>, &[u8], Objective<'_>, u64)],
    dropout: bool,
) -> StepOutcome {
    let parts: Vec<(f64, Weights)> = items
        .par_iter()
        .map(|(ids, mask, obj, seed)| {
            let mut g = params.weights.zeros_like();
            let mut rng = seeded(*seed);
            let loss = accumulate_gradients(params, ids, mask, obj, dropout.then_some(&mut rng), &mut g);
            (loss, g)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_scaled(&g, 1.0);
    }
    StepOutcome { loss, grads }
}

fn check_common(batch_size: usize, epochs: usize, lr: f64) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }
    Ok(())
}

/// Masked-LM pretraining. The classifier head is not touched.
pub fn pretrain_mlm(params: &EncoderParams, corpus: &[Encoding], cfg: &PretrainConfig) -> Result<(EncoderParams, TrainHistory)> {
    if corpus.is_empty() {
        return Err(Error::Fit("masked-LM pretraining needs a non-empty corpus".into()));
    }
    if !(cfg.mask_fraction > 0.0 && cfg.mask_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "mask_fraction {} leaves no prediction targets; use a value in (0, 1]",
            cfg.mask_fraction
        )));
    }
    check_common(cfg.batch_size, cfg.epochs, cfg.learning_rate)?;
    let mut params = params.clone();
    let vocab_size = params.config.vocab_size;
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &params.weights,
    );
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut seeded(epoch_seed));
        let (mut epoch_loss, mut epoch_targets) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(epoch_seed, b as u64 + 1);
            let masked: Vec<(Vec<u32>, Vec<(usize, u32)>)> = chunk
                .iter()
                .enumerate()
                .map(|(i, &ex)| {
                    let mut rng = seeded(derive_seed(batch_seed, 2 * i as u64));
                    mask_tokens(&corpus[ex], cfg.mask_fraction, vocab_size, &mut rng)
                })
                .collect();
            let n_targets: usize = masked.iter().map(|m| m.1.len()).sum();
            if n_targets == 0 {
                continue;
            }
            let weight = 1.0 / n_targets as f64;
            let items: Vec<(Vec<u32>, &[u8], Objective, u64)> = chunk
                .iter()
                .zip(&masked)
                .enumerate()
                .map(|(i, (&ex, (ids, targets)))| {
                    let obj = Objective {
                        label: None,
                        cls_weight: 0.0,
                        mlm_targets: targets,
                        mlm_weight: weight,
                    };
                    (ids.clone(), corpus[ex].attention_mask.as_slice(), obj, derive_seed(batch_seed, 2 * i as u64 + 1))
                })
                .collect();
            let out = batch_gradients(&params, &items, true);
            let lr = learning_rate_at(step, total, cfg.learning_rate, cfg.warmup_fraction);
            opt.step(&mut params, &out.grads, lr, |g| g != ParamGroup::Classifier);
            history.records.push(MetricRecord {
                step,
                loss: out.loss,
                lr,
                split: "pretrain".into(),
            });
            epoch_loss += out.loss * n_targets as f64;
            epoch_targets += n_targets;
            step += 1;
        }
        history.epoch_loss.push(epoch_loss / epoch_targets.max(1) as f64);
    }
    Ok((params, history))
}

/// Mean masked-LM loss of a corpus under fixed masking (no dropout).
pub fn mlm_loss(params: &EncoderParams, corpus: &[Encoding], mask_fraction: f64, seed: u64) -> f64 {
    let (sum, count) = corpus
        .par_iter()
        .enumerate()
        .map(|(i, enc)| {
            let mut rng = seeded(derive_seed(seed, i as u64));
            let (ids, targets) = mask_tokens(enc, mask_fraction, params.config.vocab_size, &mut rng);
            let obj = Objective {
                mlm_targets: &targets,
                mlm_weight: 1.0,
                ..Default::default()
            };
            let mut g = params.weights.zeros_like();
            (accumulate_gradients(params, &ids, &enc.attention_mask, &obj, None, &mut g), targets.len())
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    sum / count.max(1) as f64
}

/// Predicted topic per encoding.
pub fn predict(params: &EncoderParams, encodings: &[Encoding]) -> Result<Vec<Topic>> {
    encodings
        .par_iter()
        .map(|e| forward(params, &e.ids, &e.attention_mask, false).map(|o| o.predicted()))
        .collect()
}

/// Class probabilities per encoding.
pub fn predict_proba(params: &EncoderParams, encodings: &[Encoding]) -> Result<Vec<Vec<f64>>> {
    encodings
        .par_iter()
        .map(|e| forward(params, &e.ids, &e.attention_mask, false).map(|o| softmax(&o.cls_logits)))
        .collect()
}

/// Classification fine-tuning. With a validation set the weights of the epoch
/// with the best validation macro-F1 are returned (earliest on ties).
pub fn finetune(
    params: &EncoderParams,
    train: &[(Encoding, Topic)],
    validation: Option<&[(Encoding, Topic)]>,
    cfg: &FinetuneConfig,
) -> Result<(EncoderParams, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Fit("fine-tuning needs a non-empty dataset".into()));
    }
    check_common(cfg.batch_size, cfg.epochs, cfg.learning_rate)?;
    let mut params = params.clone();
    let l = params.config.num_layers;
    params.freeze = match cfg.freeze_top_n {
        Some(n) => FreezeFlags::top_n(l, n)?,
        None => FreezeFlags::none(l),
    };
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &params.weights,
    );
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, EncoderParams)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded(epoch_seed));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(epoch_seed, b as u64 + 1);
            let weight = 1.0 / chunk.len() as f64;
            let items: Vec<(Vec<u32>, &[u8], Objective, u64)> = chunk
                .iter()
                .enumerate()
                .map(|(i, &ex)| {
                    let (enc, label) = &train[ex];
                    let obj = Objective {
                        label: Some(*label),
                        cls_weight: weight,
                        ..Default::default()
                    };
                    (enc.ids.clone(), enc.attention_mask.as_slice(), obj, derive_seed(batch_seed, i as u64))
                })
                .collect();
            let out = batch_gradients(&params, &items, true);
            let lr = learning_rate_at(step, total, cfg.learning_rate, cfg.warmup_fraction);
            opt.step(&mut params, &out.grads, lr, |g| g != ParamGroup::MlmHead);
            history.records.push(MetricRecord {
                step,
                loss: out.loss,
                lr,
                split: "train".into(),
            });
            epoch_loss += out.loss * chunk.len() as f64;
            step += 1;
        }
        history.epoch_loss.push(epoch_loss / train.len() as f64);

        if let Some(val) = validation.filter(|v| !v.is_empty()) {
            let encs: Vec<Encoding> = val.iter().map(|(e, _)| e.clone()).collect();
            let golds: Vec<Topic> = val.iter().map(|(_, t)| *t).collect();
            let probs = predict_proba(&params, &encs)?;
            let val_loss = probs
                .iter()
                .zip(&golds)
                .map(|(p, g)| -p[g.index()].max(1e-300).ln())
                .sum::<f64>()
                / golds.len() as f64;
            let preds: Vec<Topic> = probs
                .iter()
                .map(|p| Topic::from_index(crate::tfidf::argmax(p)).expect("five classes"))
                .collect();
            let f1 = macro_f1(&preds, &golds)?;
            history.records.push(MetricRecord {
                step,
                loss: val_loss,
                lr: 0.0,
                split: "validation".into(),
            });
            history.val_macro_f1.push(f1);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, params.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    match best {
        Some((_, p)) => Ok((p, history)),
        None => {
            history.best_epoch = Some(cfg.epochs - 1);
            Ok((params, history))
        }
    }
}

pub const DEFAULT_BATCH_SIZES: [usize; 4] = [10, 16, 32, 64];
pub const DEFAULT_LEARNING_RATES: [f64; 4] = [5e-6, 1e-5, 3e-5, 5e-5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridCell,
    pub cells: Vec<GridCell>,
}

/// Score every (batch size, learning rate) cell and keep the best. Ties go to
/// the larger batch, then the smaller learning rate. NaN scores never win.
pub fn grid_search(
    batch_sizes: &[usize],
    learning_rates: &[f64],
    mut score: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GridResult> {
    if batch_sizes.is_empty() || learning_rates.is_empty() {
        return Err(Error::Config("grid search needs at least one batch size and learning rate".into()));
    }
    let mut cells = Vec::new();
    for &bs in batch_sizes {
        for &lr in learning_rates {
            cells.push(GridCell {
                batch_size: bs,
                learning_rate: lr,
                score: score(bs, lr)?,
            });
        }
    }
    let key = |c: &GridCell| if c.score.is_nan() { f64::NEG_INFINITY } else { c.score };
    let mut best = cells[0].clone();
    for c in &cells[1..] {
        let better = key(c) > key(&best)
            || (key(c) == key(&best)
                && (c.batch_size > best.batch_size
                    || (c.batch_size == best.batch_size && c.learning_rate < best.learning_rate)));
        if better {
            best = c.clone();
        }
    }
    Ok(GridResult { best, cells })
}

/// Grid search over fine-tuning runs scored by validation macro-F1.
pub fn grid_search_finetune(
    params: &EncoderParams,
    train: &[(Encoding, Topic)],
    validation: &[(Encoding, Topic)],
    batch_sizes: &[usize],
    learning_rates: &[f64],
    base: &FinetuneConfig,
) -> Result<GridResult> {
    if validation.is_empty() {
        return Err(Error::Fit("grid search needs a validation split".into()));
    }
    let encs: Vec<Encoding> = validation.iter().map(|(e, _)| e.clone()).collect();
    let golds: Vec<Topic> = validation.iter().map(|(_, t)| *t).collect();
    grid_search(batch_sizes, learning_rates, |bs, lr| {
        let cfg = FinetuneConfig {
            batch_size: bs,
            learning_rate: lr,
            ..base.clone()
        };
        let (p, _) = finetune(params, train, Some(validation), &cfg)?;
        macro_f1(&predict(&p, &encs)?, &golds)
    })
}
