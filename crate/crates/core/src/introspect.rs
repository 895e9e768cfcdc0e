//! Attention capture and before/after fine-tuning comparison.

use std::path::Path;

use ndarray::{s, Array2, Array4, ArrayView2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::vocab::CONTINUATION;
use crate::encoder::{forward, AttentionRecord, EncoderParams, SubwordVocab};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::topic::Topic;

/// Forward `text` with capture on. The record covers the real tokens only,
/// so padding never appears as a key column.
pub fn capture_attentions(params: &EncoderParams, vocab: &SubwordVocab, text: &str) -> Result<AttentionRecord> {
    let enc = vocab.encode(text, params.config.max_seq_len);
    let out = forward(params, &enc.ids, &enc.attention_mask, true)?;
    let att = out.attention.expect("capture requested");
    let n = att.shape()[2];
    Ok(AttentionRecord {
        tokens: enc.ids[..n].iter().map(|&i| vocab.piece(i).to_string()).collect(),
        matrices: att,
        word_alignment: enc.word_alignment[..n].to_vec(),
    })
}

/// Group consecutive positions that belong to the same word; specials stay on
/// their own.
fn units(alignment: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, a) in alignment.iter().enumerate() {
        match (a, out.last()) {
            (Some(w), Some(prev)) if alignment[*prev.last().unwrap()] == Some(*w) => {
                out.last_mut().unwrap().push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Word-level view: key weights are summed over a word's pieces, query rows
/// are averaged over them.
pub fn merge_subword_attention(record: &AttentionRecord) -> AttentionRecord {
    let groups = units(&record.word_alignment);
    let (l, h) = (record.matrices.shape()[0], record.matrices.shape()[1]);
    let u = groups.len();
    let mut m = Array4::zeros((l, h, u, u));
    for li in 0..l {
        for hi in 0..h {
            let src = record.matrices.slice(s![li, hi, .., ..]);
            for (qu, qs) in groups.iter().enumerate() {
                for (ku, ks) in groups.iter().enumerate() {
                    let total: f64 = qs.iter().map(|&q| ks.iter().map(|&k| src[[q, k]]).sum::<f64>()).sum();
                    m[[li, hi, qu, ku]] = total / qs.len() as f64;
                }
            }
        }
    }
    let tokens = groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|&i| {
                    let t = &record.tokens[i];
                    if g.len() > 1 { t.trim_start_matches(CONTINUATION) } else { t.as_str() }
                })
                .collect::<String>()
        })
        .collect();
    AttentionRecord {
        tokens,
        matrices: m,
        word_alignment: groups.iter().map(|g| record.word_alignment[g[0]]).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input is all zeros; `value` is then 0.
    pub zero_input: bool,
}

/// Cosine similarity of two matrices flattened to vectors.
pub fn flattened_cosine(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Cosine> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            zero_input: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        zero_input: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Mean cosine per layer (rows) and head (columns).
    pub matrix: Array2<f64>,
    /// One-based (layer, head) with the lowest mean similarity.
    pub argmin: (usize, usize),
    pub min_value: f64,
    pub samples: usize,
    pub merged: bool,
    pub zero_inputs: usize,
}

/// Per-head mean cosine between the attentions of two models over `texts`.
pub fn attention_drift(
    before: &EncoderParams,
    after: &EncoderParams,
    vocab: &SubwordVocab,
    texts: &[String],
    merged: bool,
) -> Result<DriftReport> {
    if before.config != after.config {
        return Err(Error::Config("models being compared have different configurations".into()));
    }
    if texts.is_empty() {
        return Err(Error::Validation {
            line: None,
            message: "attention drift needs at least one sample text".into(),
        });
    }
    let (l, h) = (before.config.num_layers, before.config.num_heads);
    let per_text: Vec<(Array2<f64>, usize)> = texts
        .par_iter()
        .map(|t| -> Result<(Array2<f64>, usize)> {
            let mut a = capture_attentions(before, vocab, t)?;
            let mut b = capture_attentions(after, vocab, t)?;
            if merged {
                a = merge_subword_attention(&a);
                b = merge_subword_attention(&b);
            }
            let mut m = Array2::zeros((l, h));
            let mut zeros = 0;
            for li in 0..l {
                for hi in 0..h {
                    let c = flattened_cosine(a.matrices.slice(s![li, hi, .., ..]), b.matrices.slice(s![li, hi, .., ..]))?;
                    zeros += usize::from(c.zero_input);
                    m[[li, hi]] = c.value;
                }
            }
            Ok((m, zeros))
        })
        .collect::<Result<_>>()?;
    let mut matrix = Array2::zeros((l, h));
    let mut zero_inputs = 0;
    for (m, z) in &per_text {
        matrix += m;
        zero_inputs += z;
    }
    matrix /= texts.len() as f64;
    let mut argmin = (0, 0);
    for li in 0..l {
        for hi in 0..h {
            if matrix[[li, hi]] < matrix[argmin] {
                argmin = (li, hi);
            }
        }
    }
    Ok(DriftReport {
        min_value: matrix[argmin],
        argmin: (argmin.0 + 1, argmin.1 + 1),
        matrix,
        samples: texts.len(),
        merged,
        zero_inputs,
    })
}

/// Up to `per_class` texts from each class, sampled with `seed`, in class order.
pub fn sample_per_class(items: &[(String, Topic)], per_class: usize, seed: u64) -> Vec<String> {
    let mut out = Vec::new();
    for t in Topic::ALL {
        let mut pool: Vec<&String> = items.iter().filter(|(_, c)| *c == t).map(|(s, _)| s).collect();
        pool.shuffle(&mut seeded(derive_seed(seed, t.index() as u64)));
        out.extend(pool.into_iter().take(per_class).cloned());
    }
    out
}

pub const ATTENTION_VIEW_FORMAT: &str = "admelabel-attention";
pub const ATTENTION_VIEW_VERSION: u32 = 1;

/// JSON export for external plotting. `record.matrices` is stored as
/// `{v, dim: [L, H, T, T], data: [...]}` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionView {
    pub format: String,
    pub version: u32,
    pub record: Option<AttentionRecord>,
    pub drift: Option<DriftReport>,
}

impl AttentionView {
    pub fn new(record: Option<AttentionRecord>, drift: Option<DriftReport>) -> Self {
        AttentionView {
            format: ATTENTION_VIEW_FORMAT.into(),
            version: ATTENTION_VIEW_VERSION,
            record,
            drift,
        }
    }
}

pub fn export_attention_view(view: &AttentionView, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(view)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_attention_view(path: &Path) -> Result<AttentionView> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let v: AttentionView = serde_json::from_slice(&bytes)?;
    if v.format != ATTENTION_VIEW_FORMAT || v.version != ATTENTION_VIEW_VERSION {
        return Err(Error::Load(format!("{}: not an attention view", path.display())));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, train_subword_vocab, EncoderConfig, InitScheme};
    use ndarray::{array, Axis};
    use rand::Rng as _;

    fn model() -> (SubwordVocab, EncoderParams) {
        let text = "Desmopressin acetate is absorbed through the nasal mucosa.".to_string();
        let vocab = train_subword_vocab(&[text.clone(), "absorbed absorbed".into()], 60).unwrap();
        let cfg = EncoderConfig {
            num_layers: 3,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 32,
            vocab_size: vocab.len(),
            ..Default::default()
        };
        (vocab, init_params(&cfg, &InitScheme::Uniform, 8).unwrap())
    }

    #[test]
    fn capture_shapes_and_rows() {
        let (vocab, p) = model();
        let text = "Desmopressin acetate is absorbed through the nasal mucosa.";
        let r = capture_attentions(&p, &vocab, text).unwrap();
        let n = vocab.encode(text, 32).len();
        assert_eq!(r.matrices.shape(), &[3, 2, n, n]);
        assert_eq!(r.tokens.len(), n);
        assert_eq!(r.tokens[0], "[CLS]");
        for row in r.matrices.lanes(Axis(3)) {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(r, capture_attentions(&p, &vocab, text).unwrap());

        let one = capture_attentions(&p, &vocab, "absorbed").unwrap();
        let pieces = vocab.tokenize_word("absorbed").len();
        assert_eq!(one.matrices.shape()[2], pieces + 2);
    }

    #[test]
    fn merge_rules() {
        // [CLS] ab ##c d [SEP]
        let mut m = Array4::zeros((1, 1, 5, 5));
        let rows = [
            [0.2, 0.2, 0.2, 0.2, 0.2],
            [0.1, 0.3, 0.1, 0.4, 0.1],
            [0.5, 0.1, 0.1, 0.2, 0.1],
            [0.0, 0.5, 0.5, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0],
        ];
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[[0, 0, i, j]] = *v;
            }
        }
        let rec = AttentionRecord {
            tokens: ["[CLS]", "ab", "##c", "d", "[SEP]"].iter().map(|s| s.to_string()).collect(),
            matrices: m,
            word_alignment: vec![None, Some(0), Some(0), Some(1), None],
        };
        let merged = merge_subword_attention(&rec);
        assert_eq!(merged.tokens, ["[CLS]", "abc", "d", "[SEP]"]);
        let mm = merged.matrices.slice(s![0usize, 0usize, .., ..]);
        // Word "abc" attends to "d" with the average of 0.4 and 0.2.
        assert!((mm[[1usize, 2]] - 0.3).abs() < 1e-12);
        // "d" attends to "abc" with the sum 0.5 + 0.5.
        assert!((mm[[2usize, 1]] - 1.0).abs() < 1e-12);
        for row in merged.matrices.lanes(Axis(3)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }

        let plain = AttentionRecord {
            tokens: vec!["[CLS]".into(), "d".into(), "[SEP]".into()],
            matrices: Array4::from_elem((1, 1, 3, 3), 1.0 / 3.0),
            word_alignment: vec![None, Some(0), None],
        };
        assert_eq!(merge_subword_attention(&plain), plain);
    }

    fn brute_cosine(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let va: Vec<f64> = a.iter().cloned().collect();
        let vb: Vec<f64> = b.iter().cloned().collect();
        let mut dot = 0.0;
        for i in 0..va.len() {
            dot += va[i] * vb[i];
        }
        let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn cosine_cases() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        assert!((flattened_cosine(a.view(), a.view()).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(flattened_cosine(a.view(), b.view()).unwrap().value, 0.0);
        let z = Array2::zeros((2, 2));
        let c = flattened_cosine(a.view(), z.view()).unwrap();
        assert!(c.zero_input && c.value == 0.0);
        assert!(flattened_cosine(a.view(), Array2::zeros((2, 3)).view()).is_err());

        let mut rng = seeded(5);
        for _ in 0..50 {
            let x = Array2::from_shape_simple_fn((4, 4), || rng.gen_range(-1.0..1.0));
            let y = Array2::from_shape_simple_fn((4, 4), || rng.gen_range(-1.0..1.0));
            let c = flattened_cosine(x.view(), y.view()).unwrap().value;
            assert!((c - brute_cosine(&x, &y)).abs() < 1e-12);
            assert_eq!(c, flattened_cosine(y.view(), x.view()).unwrap().value);
        }
    }

    #[test]
    fn drift_identity_and_top_layer_perturbation() {
        let (vocab, p) = model();
        let texts = vec![
            "Desmopressin acetate is absorbed through the nasal mucosa.".to_string(),
            "absorbed through the nasal mucosa".to_string(),
        ];
        let same = attention_drift(&p, &p, &vocab, &texts, false).unwrap();
        assert!(same.matrix.iter().all(|&v| (v - 1.0).abs() < 1e-9));
        assert_eq!(same.samples, 2);

        let mut q = p.clone();
        let mut rng = seeded(1);
        let top = q.weights.layers.last_mut().unwrap();
        top.query.w.mapv_inplace(|v| v + rng.gen_range(-2.0..2.0));
        top.key.w.mapv_inplace(|v| v + rng.gen_range(-2.0..2.0));
        let d = attention_drift(&p, &q, &vocab, &texts, false).unwrap();
        for li in 0..2 {
            assert!(d.matrix.row(li).iter().all(|&v| (v - 1.0).abs() < 1e-9));
        }
        assert!(d.matrix.row(2).iter().all(|&v| v < 1.0));
        assert_eq!(d.argmin.0, 3);
        assert!(d.matrix.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));

        assert!(attention_drift(&p, &q, &vocab, &[], false).is_err());
        let mut other = p.clone();
        other.config.dropout_rate = 0.2;
        assert!(attention_drift(&p, &other, &vocab, &texts, false).is_err());
    }

    #[test]
    fn export_round_trip() {
        let (vocab, p) = model();
        let rec = capture_attentions(&p, &vocab, "absorbed through the mucosa").unwrap();
        let merged = merge_subword_attention(&rec);
        let drift = DriftReport {
            matrix: Array2::from_elem((4, 4), 0.5),
            argmin: (1, 1),
            min_value: 0.5,
            samples: 1,
            merged: false,
            zero_inputs: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.json");
        let view = AttentionView::new(Some(merged.clone()), Some(drift));
        export_attention_view(&view, &path).unwrap();
        let back = read_attention_view(&path).unwrap();
        assert_eq!(back, view);
        assert_eq!(back.drift.unwrap().matrix.len(), 16);
        assert_eq!(back.record.unwrap().tokens, merged.tokens);
        assert!(export_attention_view(&view, &dir.path().join("no/such/dir/v.json")).is_err());
    }

    #[test]
    fn per_class_sampling() {
        let items: Vec<(String, Topic)> = (0..30).map(|i| (format!("t{i}"), Topic::ALL[i % 5])).collect();
        let s = sample_per_class(&items, 4, 1);
        assert_eq!(s.len(), 20);
        assert_eq!(sample_per_class(&items, 100, 1).len(), 30);
        assert_eq!(s, sample_per_class(&items, 4, 1));
    }
}
