use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};
use crate::topic::Topic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub layer_norm_epsilon: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 4,
            num_heads: 4,
            hidden_size: 128,
            ffn_size: 512,
            max_seq_len: 128,
            vocab_size: 0,
            dropout_rate: 0.1,
            layer_norm_epsilon: 1e-12,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_size == 0 || self.ffn_size == 0 {
            return bad("layer, head, hidden and ffn sizes must be positive".into());
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        if self.vocab_size <= super::vocab::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for pieces", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.layer_norm_epsilon <= 0.0 {
            return bad("layer_norm_epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Affine map `x · w + b` with `w` stored input-by-output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            w: Array2::zeros((inp, out)),
            b: Array1::zeros(out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl Norm {
    fn new(d: usize) -> Self {
        Norm {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub attn_out: Dense,
    pub attn_norm: Norm,
    pub ffn_in: Dense,
    pub ffn_out: Dense,
    pub ffn_norm: Norm,
}

impl LayerWeights {
    fn zeros(cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_size;
        LayerWeights {
            query: Dense::zeros(d, d),
            key: Dense::zeros(d, d),
            value: Dense::zeros(d, d),
            attn_out: Dense::zeros(d, d),
            attn_norm: Norm::new(d),
            ffn_in: Dense::zeros(d, cfg.ffn_size),
            ffn_out: Dense::zeros(cfg.ffn_size, d),
            ffn_norm: Norm::new(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub seg_emb: Array2<f64>,
    pub emb_norm: Norm,
    pub layers: Vec<LayerWeights>,
    pub mlm_transform: Dense,
    pub mlm_norm: Norm,
    /// Untied output projection, hidden-by-vocab.
    pub mlm_decoder: Dense,
    /// Classifier weights, classes-by-hidden.
    pub cls_w: Array2<f64>,
    pub cls_b: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Embeddings,
    /// Zero-based layer index.
    Layer(usize),
    MlmHead,
    Classifier,
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamGroup::Embeddings => write!(f, "embeddings"),
            ParamGroup::Layer(i) => write!(f, "layer {}", i + 1),
            ParamGroup::MlmHead => write!(f, "mlm head"),
            ParamGroup::Classifier => write!(f, "classifier"),
        }
    }
}


macro_rules! visit_tensors {
    ($w:expr, $f:ident, $slice:ident) => {{
        macro_rules! t {
            ($name:expr, $g:expr, $decay:expr, $a:expr) => {{
                let shape = $a.shape().to_vec();
                $f(&$name, $g, $decay, &shape, $a.$slice().expect("standard layout"));
            }};
        }
        macro_rules! dense {
            ($prefix:expr, $g:expr, $d:expr) => {{
                t!(format!("{}.w", $prefix), $g, true, $d.w);
                t!(format!("{}.b", $prefix), $g, false, $d.b);
            }};
        }
        macro_rules! norm {
            ($prefix:expr, $g:expr, $n:expr) => {{
                t!(format!("{}.gain", $prefix), $g, false, $n.gain);
                t!(format!("{}.bias", $prefix), $g, false, $n.bias);
            }};
        }
        let e = ParamGroup::Embeddings;
        t!("embeddings.token", e, true, $w.token_emb);
        t!("embeddings.position", e, true, $w.pos_emb);
        t!("embeddings.segment", e, true, $w.seg_emb);
        norm!("embeddings.norm", e, $w.emb_norm);
        for i in 0..$w.layers.len() {
            let g = ParamGroup::Layer(i);
            let p = format!("layer{}", i + 1);
            dense!(format!("{p}.query"), g, $w.layers[i].query);
            dense!(format!("{p}.key"), g, $w.layers[i].key);
            dense!(format!("{p}.value"), g, $w.layers[i].value);
            dense!(format!("{p}.attn_out"), g, $w.layers[i].attn_out);
            norm!(format!("{p}.attn_norm"), g, $w.layers[i].attn_norm);
            dense!(format!("{p}.ffn_in"), g, $w.layers[i].ffn_in);
            dense!(format!("{p}.ffn_out"), g, $w.layers[i].ffn_out);
            norm!(format!("{p}.ffn_norm"), g, $w.layers[i].ffn_norm);
        }
        let m = ParamGroup::MlmHead;
        dense!("mlm.transform", m, $w.mlm_transform);
        norm!("mlm.norm", m, $w.mlm_norm);
        dense!("mlm.decoder", m, $w.mlm_decoder);
        let c = ParamGroup::Classifier;
        t!("classifier.w", c, true, $w.cls_w);
        t!("classifier.b", c, false, $w.cls_b);
    }};
}

impl Weights {
    /// Shapes from `cfg`; matrices zero, norm gains one.
    pub fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_size;
        Weights {
            token_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_seq_len, d)),
            seg_emb: Array2::zeros((2, d)),
            emb_norm: Norm::new(d),
            layers: (0..cfg.num_layers).map(|_| LayerWeights::zeros(cfg)).collect(),
            mlm_transform: Dense::zeros(d, d),
            mlm_norm: Norm::new(d),
            mlm_decoder: Dense::zeros(d, cfg.vocab_size),
            cls_w: Array2::zeros((Topic::COUNT, d)),
            cls_b: Array1::zeros(Topic::COUNT),
        }
    }

    /// Same shapes, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, _, _, _, x| x.fill(0.0));
        z
    }

    /// Visit every tensor in a fixed order: name, group, decay flag, shape, data.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, ParamGroup, bool, &[usize], &'a [f64])) {
        visit_tensors!(self, f, as_slice);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, ParamGroup, bool, &[usize], &mut [f64])) {
        visit_tensors!(self, f, as_slice_mut);
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, _, _, _| n += 1);
        n
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, _, _, x| n += x.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, _, _, x| ok &= x.iter().all(|v| v.is_finite()));
        ok
    }

    /// Flattened copy of every tensor in one group, in visiting order.
    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(|_, g, _, _, x| {
            if g == group {
                out.extend_from_slice(x);
            }
        });
        out
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Weights, alpha: f64) {
        let mut src = Vec::new();
        other.visit(|_, _, _, _, x| src.push(x));
        let mut it = src.into_iter();
        self.visit_mut(|_, _, _, _, x| {
            let s = it.next().expect("same layout");
            for (a, b) in x.iter_mut().zip(s) {
                *a += alpha * b;
            }
        });
    }

    /// Names of groups whose tensor shapes differ from `cfg`.
    pub fn shape_mismatches(&self, cfg: &EncoderConfig) -> Vec<String> {
        let expected = Weights::new(cfg);
        let mut want: Vec<(String, ParamGroup, Vec<usize>)> = Vec::new();
        expected.visit(|n, g, _, s, _| want.push((n.to_string(), g, s.to_vec())));
        let mut have: Vec<(String, Vec<usize>)> = Vec::new();
        self.visit(|n, _, _, s, _| have.push((n.to_string(), s.to_vec())));
        let mut bad: Vec<String> = Vec::new();
        for (name, group, shape) in &want {
            let found = have.iter().find(|(n, _)| n == name);
            let ok = found.is_some_and(|(_, s)| s == shape);
            let label = group.to_string();
            if !ok && !bad.contains(&label) {
                bad.push(label);
            }
        }
        if have.len() > want.len() && !bad.iter().any(|b| b.starts_with("layer")) {
            bad.push(format!("layers (found {}, expected {})", self.layers.len(), cfg.num_layers));
        }
        bad
    }
}

/// Per-group freeze flags. Frozen groups receive no updates.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeFlags {
    pub embeddings: bool,
    pub layers: Vec<bool>,
    pub mlm_head: bool,
    pub classifier: bool,
}

impl FreezeFlags {
    pub fn none(num_layers: usize) -> Self {
        FreezeFlags {
            layers: vec![false; num_layers],
            ..Default::default()
        }
    }

    /// Train only the top `n` layers and the classifier head.
    pub fn top_n(num_layers: usize, n: usize) -> Result<Self> {
        if n > num_layers {
            return Err(Error::Config(format!(
                "cannot fine-tune the top {n} layers of a {num_layers}-layer encoder"
            )));
        }
        Ok(FreezeFlags {
            embeddings: true,
            layers: (0..num_layers).map(|i| i < num_layers - n).collect(),
            mlm_head: false,
            classifier: false,
        })
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Embeddings => self.embeddings,
            ParamGroup::Layer(i) => self.layers.get(i).copied().unwrap_or(false),
            ParamGroup::MlmHead => self.mlm_head,
            ParamGroup::Classifier => self.classifier,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub weights: Weights,
    pub freeze: FreezeFlags,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    TruncatedNormal,
    Uniform,
    Load(PathBuf),
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated_normal" => Ok(InitScheme::TruncatedNormal),
            "uniform" => Ok(InitScheme::Uniform),
            other => match other.strip_prefix("load:") {
                Some(p) => Ok(InitScheme::Load(PathBuf::from(p))),
                None => Err(Error::Config(format!(
                    "unknown init scheme {other:?} (truncated_normal, uniform, load:<path>)"
                ))),
            },
        }
    }
}

pub const TRUNC_NORMAL_STD: f64 = 0.02;
pub const TRUNC_NORMAL_BOUND: f64 = 0.04;
pub const UNIFORM_BOUND: f64 = 0.1;

/// One draw from the scheme's weight distribution.
fn sample(scheme: &InitScheme, rng: &mut Rng) -> f64 {
    match scheme {
        InitScheme::TruncatedNormal => {
            let normal = Normal::new(0.0, TRUNC_NORMAL_STD).expect("valid std");
            loop {
                let x: f64 = normal.sample(rng);
                if x.abs() <= TRUNC_NORMAL_BOUND {
                    return x;
                }
            }
        }
        InitScheme::Uniform => rng.gen_range(-UNIFORM_BOUND..UNIFORM_BOUND),
        InitScheme::Load(_) => unreachable!("load is not a sampling scheme"),
    }
}

/// Re-sample every tensor selected by `pick`: decayed tensors (matrices and
/// embeddings) from the scheme, biases to zero, norm gains to one.
fn resample(weights: &mut Weights, scheme: &InitScheme, rng: &mut Rng, pick: impl Fn(ParamGroup) -> bool) {
    weights.visit_mut(|name, group, decay, _, x| {
        if !pick(group) {
            return;
        }
        if decay {
            x.iter_mut().for_each(|v| *v = sample(scheme, rng));
        } else if name.ends_with(".gain") {
            x.fill(1.0);
        } else {
            x.fill(0.0);
        }
    });
}

pub fn init_params(config: &EncoderConfig, scheme: &InitScheme, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    if let InitScheme::Load(path) = scheme {
        let ckpt = super::checkpoint::Checkpoint::load(path)?;
        let bad = ckpt.weights.shape_mismatches(config);
        if !bad.is_empty() || ckpt.config.num_layers != config.num_layers {
            return Err(Error::Load(format!(
                "{}: shape mismatch in {}",
                path.display(),
                bad.join(", ")
            )));
        }
        return Ok(EncoderParams {
            config: config.clone(),
            weights: ckpt.weights,
            freeze: FreezeFlags::none(config.num_layers),
        });
    }
    let mut weights = Weights::new(config);
    let mut rng = seeded(seed);
    resample(&mut weights, scheme, &mut rng, |_| true);
    Ok(EncoderParams {
        config: config.clone(),
        weights,
        freeze: FreezeFlags::none(config.num_layers),
    })
}

/// Re-sample the top `n` layers and the classifier head; everything else is
/// left untouched.
pub fn reinit_top_layers(params: &EncoderParams, n: usize, scheme: &InitScheme, seed: u64) -> Result<EncoderParams> {
    let l = params.config.num_layers;
    if n > l {
        return Err(Error::Config(format!("cannot re-initialize {n} layers of a {l}-layer encoder")));
    }
    if matches!(scheme, InitScheme::Load(_)) {
        return Err(Error::Config("re-initialization needs a sampling scheme".into()));
    }
    let mut out = params.clone();
    let mut rng = seeded(seed);
    resample(&mut out.weights, scheme, &mut rng, |g| match g {
        ParamGroup::Layer(i) => i >= l - n,
        ParamGroup::Classifier => true,
        _ => false,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> EncoderConfig {
        EncoderConfig {
            num_layers: 4,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 10,
            vocab_size: 30,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        let mut c = tiny();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn truncated_normal_bounds_and_norms() {
        let p = init_params(&tiny(), &InitScheme::TruncatedNormal, 1).unwrap();
        p.weights.visit(|name, _, decay, _, x| {
            if decay {
                assert!(x.iter().all(|v| v.abs() <= TRUNC_NORMAL_BOUND), "{name}");
                assert!(x.iter().any(|&v| v != 0.0), "{name}");
            } else if name.ends_with(".gain") {
                assert!(x.iter().all(|&v| v == 1.0));
            } else {
                assert!(x.iter().all(|&v| v == 0.0));
            }
        });
        assert!(p.weights.all_finite());
    }

    #[test]
    fn uniform_mean_near_zero() {
        let mut rng = seeded(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = sample(&InitScheme::Uniform, &mut rng);
            assert!(x.abs() <= UNIFORM_BOUND);
            sum += x;
        }
        assert!((sum / n as f64).abs() <= 1e-3);
    }

    #[test]
    fn seeded_init_is_bit_identical() {
        let a = init_params(&tiny(), &InitScheme::Uniform, 5).unwrap();
        let b = init_params(&tiny(), &InitScheme::Uniform, 5).unwrap();
        assert_eq!(a, b);
        let c = init_params(&tiny(), &InitScheme::Uniform, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reinit_boundaries() {
        let p = init_params(&tiny(), &InitScheme::TruncatedNormal, 2).unwrap();
        let same = reinit_top_layers(&p, 0, &InitScheme::TruncatedNormal, 9).unwrap();
        assert_eq!(same.weights.layers, p.weights.layers);
        assert_ne!(same.weights.cls_w, p.weights.cls_w);

        let two = reinit_top_layers(&p, 2, &InitScheme::TruncatedNormal, 9).unwrap();
        assert_eq!(two.weights.layers[..2], p.weights.layers[..2]);
        assert_ne!(two.weights.layers[2], p.weights.layers[2]);
        assert_ne!(two.weights.layers[3], p.weights.layers[3]);
        assert_eq!(two.weights.group_values(ParamGroup::Embeddings), p.weights.group_values(ParamGroup::Embeddings));
        assert_eq!(two.weights.group_values(ParamGroup::MlmHead), p.weights.group_values(ParamGroup::MlmHead));

        let all = reinit_top_layers(&p, 4, &InitScheme::Uniform, 9).unwrap();
        for l in 0..4 {
            assert_ne!(all.weights.layers[l], p.weights.layers[l]);
        }
        assert_eq!(all.weights.token_emb, p.weights.token_emb);
        assert!(reinit_top_layers(&p, 5, &InitScheme::Uniform, 9).is_err());
    }

    #[test]
    fn freeze_flags_top_n() {
        let f = FreezeFlags::top_n(4, 1).unwrap();
        assert!(f.is_frozen(ParamGroup::Embeddings));
        assert!(f.is_frozen(ParamGroup::Layer(2)));
        assert!(!f.is_frozen(ParamGroup::Layer(3)));
        assert!(!f.is_frozen(ParamGroup::Classifier));
        let head = FreezeFlags::top_n(4, 0).unwrap();
        assert!((0..4).all(|i| head.is_frozen(ParamGroup::Layer(i))));
        assert!(FreezeFlags::top_n(4, 5).is_err());
    }

    #[test]
    fn shape_mismatch_names_group() {
        let p = init_params(&tiny(), &InitScheme::Uniform, 1).unwrap();
        let mut other = tiny();
        other.vocab_size = 31;
        let bad = p.weights.shape_mismatches(&other);
        assert!(bad.contains(&"embeddings".to_string()));
        assert!(bad.contains(&"mlm head".to_string()));
        assert!(p.weights.shape_mismatches(&tiny()).is_empty());
    }
}
