use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{Dense, EncoderConfig, EncoderParams, FreezeFlags, Norm, Weights};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::topic::Topic;

/// Attention weights captured during a forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    /// Layers × heads × T × T, rows are queries.
    pub matrices: Array4<f64>,
    pub word_alignment: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub cls_logits: Vec<f64>,
    pub mlm_logits: Option<Array2<f64>>,
    /// Layers × heads × T × T over the non-padding window.
    pub attention: Option<Array4<f64>>,
}

impl ForwardOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.cls_logits)
    }

    pub fn predicted(&self) -> Topic {
        Topic::from_index(crate::tfidf::argmax(&self.cls_logits)).expect("five logits")
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Scaled dot-product attention for one head. Keys with `valid[j] == false`
/// get weight exactly zero; a row with no valid key is all zero.
pub fn attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    valid: &[bool],
) -> (Array2<f64>, Array2<f64>) {
    let p = attention_probs(q, k, valid);
    let ctx = p.dot(&v);
    (ctx, p)
}

fn attention_probs(q: ArrayView2<f64>, k: ArrayView2<f64>, valid: &[bool]) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut p = q.dot(&k.t());
    for mut row in p.rows_mut() {
        let mut max = f64::NEG_INFINITY;
        for (j, x) in row.iter_mut().enumerate() {
            if valid[j] {
                *x *= scale;
                max = max.max(*x);
            }
        }
        let mut sum = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            *x = if valid[j] { (*x - max).exp() } else { 0.0 };
            sum += *x;
        }
        if sum > 0.0 {
            row.mapv_inplace(|x| x / sum);
        }
    }
    p
}

struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, n: &Norm, eps: f64) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + eps).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let y = &xhat * &n.gain + &n.bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_back(dy: &Array2<f64>, c: &NormCache, n: &Norm, g: &mut Norm) -> Array2<f64> {
    g.gain += &(dy * &c.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * &n.gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let s1 = dh.sum();
        let s2 = dh.dot(&xh);
        let r = c.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&dh)
            .and(&xh)
            .for_each(|o, &a, &b| *o = r / d * (d * a - s1 - b * s2));
    }
    dx
}

fn affine(x: &Array2<f64>, l: &Dense) -> Array2<f64> {
    x.dot(&l.w) + &l.b
}

/// Accumulate `dW += xᵀ dy`, `db += Σ dy` and return `dy Wᵀ`.
fn affine_back(x: ArrayView2<f64>, dy: &Array2<f64>, l: &Dense, g: &mut Dense, want_dx: bool) -> Option<Array2<f64>> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.w);
    g.b += &dy.sum_axis(Axis(0));
    want_dx.then(|| dy.dot(&l.w.t()))
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut Option<&mut Rng>) -> Option<Array2<f64>> {
    let rng = rng.as_deref_mut()?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep }))
}

fn apply(x: Array2<f64>, m: &Option<Array2<f64>>) -> Array2<f64> {
    match m {
        Some(m) => x * m,
        None => x,
    }
}

struct LayerTrace {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    prob_drop: Vec<Option<Array2<f64>>>,
    ctx: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln1: NormCache,
    h1: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ln2: NormCache,
}

struct Trace {
    ids: Vec<usize>,
    valid: Vec<bool>,
    emb: NormCache,
    emb_drop: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
    hidden: Array2<f64>,
}

/// Run the encoder over a window of real tokens. `rng` enables dropout.
fn encode(w: &Weights, cfg: &EncoderConfig, ids: &[u32], valid: &[bool], mut rng: Option<&mut Rng>) -> Trace {
    let n = ids.len();
    let d = cfg.hidden_size;
    let dk = cfg.head_dim();
    let p = cfg.dropout_rate;
    let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();

    let mut e = Array2::zeros((n, d));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = e.row_mut(t);
        row += &w.token_emb.row(id);
        row += &w.pos_emb.row(t);
        row += &w.seg_emb.row(0);
    }
    let (e, emb) = layer_norm(&e, &w.emb_norm, cfg.layer_norm_epsilon);
    let emb_drop = dropout_mask((n, d), p, &mut rng);
    let mut x = apply(e, &emb_drop);

    let mut layers = Vec::with_capacity(w.layers.len());
    for lw in &w.layers {
        let q = affine(&x, &lw.query);
        let k = affine(&x, &lw.key);
        let v = affine(&x, &lw.value);
        let mut ctx = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(cfg.num_heads);
        let mut prob_drop = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let pr = attention_probs(q.slice(cols), k.slice(cols), valid);
            let dm = dropout_mask((n, n), p, &mut rng);
            let pd = match &dm {
                Some(m) => &pr * m,
                None => pr.clone(),
            };
            ctx.slice_mut(cols).assign(&pd.dot(&v.slice(cols)));
            probs.push(pr);
            prob_drop.push(dm);
        }
        let a = affine(&ctx, &lw.attn_out);
        let attn_drop = dropout_mask((n, d), p, &mut rng);
        let s1 = &x + &apply(a, &attn_drop);
        let (h1, ln1) = layer_norm(&s1, &lw.attn_norm, cfg.layer_norm_epsilon);
        let z = affine(&h1, &lw.ffn_in);
        let g = z.mapv(gelu);
        let o = affine(&g, &lw.ffn_out);
        let ffn_drop = dropout_mask((n, d), p, &mut rng);
        let s2 = &h1 + &apply(o, &ffn_drop);
        let (h2, ln2) = layer_norm(&s2, &lw.ffn_norm, cfg.layer_norm_epsilon);
        layers.push(LayerTrace {
            x: std::mem::replace(&mut x, h2),
            q,
            k,
            v,
            probs,
            prob_drop,
            ctx,
            attn_drop,
            ln1,
            h1,
            z,
            g,
            ffn_drop,
            ln2,
        });
    }
    Trace {
        ids,
        valid: valid.to_vec(),
        emb,
        emb_drop,
        layers,
        hidden: x,
    }
}

/// Backpropagate `dh` (gradient w.r.t. the final hidden states) down to
/// layer `stop`, and into the embeddings when `stop == 0`.
fn encode_back(w: &Weights, cfg: &EncoderConfig, tr: &Trace, mut dh: Array2<f64>, stop: usize, g: &mut Weights) {
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    for li in (stop..w.layers.len()).rev() {
        let lw = &w.layers[li];
        let lt = &tr.layers[li];
        let lg = &mut g.layers[li];

        let ds2 = layer_norm_back(&dh, &lt.ln2, &lw.ffn_norm, &mut lg.ffn_norm);
        let mut dh1 = ds2.clone();
        let d_o = apply(ds2, &lt.ffn_drop);
        let dg = affine_back(lt.g.view(), &d_o, &lw.ffn_out, &mut lg.ffn_out, true).unwrap();
        let dz = dg * &lt.z.mapv(gelu_grad);
        dh1 += &affine_back(lt.h1.view(), &dz, &lw.ffn_in, &mut lg.ffn_in, true).unwrap();

        let ds1 = layer_norm_back(&dh1, &lt.ln1, &lw.attn_norm, &mut lg.attn_norm);
        let mut dx = ds1.clone();
        let da = apply(ds1, &lt.attn_drop);
        let dctx = affine_back(lt.ctx.view(), &da, &lw.attn_out, &mut lg.attn_out, true).unwrap();

        let mut dq = Array2::zeros(lt.q.raw_dim());
        let mut dkm = Array2::zeros(lt.k.raw_dim());
        let mut dv = Array2::zeros(lt.v.raw_dim());
        for h in 0..cfg.num_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let p = &lt.probs[h];
            let pd = match &lt.prob_drop[h] {
                Some(m) => p * m,
                None => p.clone(),
            };
            let dc = dctx.slice(cols);
            dv.slice_mut(cols).assign(&pd.t().dot(&dc));
            let dpd = dc.dot(&lt.v.slice(cols).t());
            let dp = apply(dpd, &lt.prob_drop[h]);
            let mut ds = Array2::zeros(p.raw_dim());
            for i in 0..p.nrows() {
                let dot = dp.row(i).dot(&p.row(i));
                Zip::from(ds.row_mut(i))
                    .and(dp.row(i))
                    .and(p.row(i))
                    .for_each(|o, &a, &b| *o = b * (a - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
            dkm.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
        }
        let want = li > stop || stop == 0;
        for (dy, l, lgw) in [
            (&dq, &lw.query, &mut lg.query),
            (&dkm, &lw.key, &mut lg.key),
            (&dv, &lw.value, &mut lg.value),
        ] {
            if let Some(d) = affine_back(lt.x.view(), dy, l, lgw, want) {
                dx += &d;
            }
        }
        dh = dx;
    }
    if stop > 0 {
        return;
    }
    let de = apply(dh, &tr.emb_drop);
    let de = layer_norm_back(&de, &tr.emb, &w.emb_norm, &mut g.emb_norm);
    for (t, &id) in tr.ids.iter().enumerate() {
        let row = de.row(t);
        let mut tok = g.token_emb.row_mut(id);
        tok += &row;
        let mut pos = g.pos_emb.row_mut(t);
        pos += &row;
    }
    let mut seg = g.seg_emb.row_mut(0);
    seg += &de.sum_axis(Axis(0));
    let _ = &tr.valid;
}

fn cls_logits(w: &Weights, h0: ArrayView1<f64>) -> Array1<f64> {
    w.cls_w.dot(&h0) + &w.cls_b
}

struct MlmTrace {
    u: Array2<f64>,
    g: Array2<f64>,
    ln: NormCache,
    t: Array2<f64>,
}

fn mlm_forward(w: &Weights, cfg: &EncoderConfig, hs: &Array2<f64>) -> (Array2<f64>, MlmTrace) {
    let u = affine(hs, &w.mlm_transform);
    let g = u.mapv(gelu);
    let (t, ln) = layer_norm(&g, &w.mlm_norm, cfg.layer_norm_epsilon);
    let logits = affine(&t, &w.mlm_decoder);
    (logits, MlmTrace { u, g, ln, t })
}

/// Non-padding window of a padded input: everything up to the last masked-in
/// position.
pub fn window(mask: &[u8]) -> usize {
    mask.iter().rposition(|&m| m == 1).map_or(1, |i| i + 1)
}

/// What a training example contributes to the loss.
#[derive(Clone, Debug, Default)]
pub struct Objective<'a> {
    pub label: Option<Topic>,
    pub cls_weight: f64,
    /// (position, target id) pairs for masked-token prediction.
    pub mlm_targets: &'a [(usize, u32)],
    pub mlm_weight: f64,
}

/// Lowest layer that needs gradients under `freeze`.
fn backprop_stop(freeze: &FreezeFlags, num_layers: usize) -> usize {
    if !freeze.embeddings {
        return 0;
    }
    (0..num_layers)
        .find(|&i| !freeze.layers.get(i).copied().unwrap_or(false))
        .unwrap_or(num_layers)
}

/// Weighted loss of one example; gradients are added into `grads`.
/// `ids` and `mask` are the padded input, `rng` enables dropout.
pub fn accumulate_gradients(
    params: &EncoderParams,
    ids: &[u32],
    mask: &[u8],
    obj: &Objective,
    rng: Option<&mut Rng>,
    grads: &mut Weights,
) -> f64 {
    let w = &params.weights;
    let cfg = &params.config;
    let n = window(mask);
    let valid: Vec<bool> = mask[..n].iter().map(|&m| m == 1).collect();
    let tr = encode(w, cfg, &ids[..n], &valid, rng);
    let mut dh = Array2::zeros(tr.hidden.raw_dim());
    let mut loss = 0.0;

    if let (Some(label), true) = (obj.label, obj.cls_weight != 0.0) {
        let h0 = tr.hidden.row(0);
        let logits = cls_logits(w, h0);
        let p = softmax(logits.as_slice().unwrap());
        let y = label.index();
        loss += obj.cls_weight * -p[y].ln();
        let mut dl = Array1::from(p);
        dl[y] -= 1.0;
        dl *= obj.cls_weight;
        for (c, &v) in dl.iter().enumerate() {
            let mut row = grads.cls_w.row_mut(c);
            row.scaled_add(v, &h0);
        }
        grads.cls_b += &dl;
        let mut d0 = dh.row_mut(0);
        d0 += &w.cls_w.t().dot(&dl);
    }

    let targets: Vec<(usize, u32)> = obj.mlm_targets.iter().copied().filter(|&(p, _)| p < n).collect();
    if !targets.is_empty() && obj.mlm_weight != 0.0 {
        let hs = Array2::from_shape_fn((targets.len(), cfg.hidden_size), |(i, j)| tr.hidden[[targets[i].0, j]]);
        let (logits, mt) = mlm_forward(w, cfg, &hs);
        let mut dl = Array2::zeros(logits.raw_dim());
        for (i, &(_, y)) in targets.iter().enumerate() {
            let p = softmax(logits.row(i).as_slice().unwrap());
            loss += obj.mlm_weight * -p[y as usize].ln();
            let mut row = dl.row_mut(i);
            row.assign(&ArrayView1::from(&p));
            row[y as usize] -= 1.0;
        }
        dl *= obj.mlm_weight;
        let dt = affine_back(mt.t.view(), &dl, &w.mlm_decoder, &mut grads.mlm_decoder, true).unwrap();
        let dg = layer_norm_back(&dt, &mt.ln, &w.mlm_norm, &mut grads.mlm_norm);
        let du = dg * &mt.u.mapv(gelu_grad);
        let dhs = affine_back(hs.view(), &du, &w.mlm_transform, &mut grads.mlm_transform, true).unwrap();
        for (i, &(p, _)) in targets.iter().enumerate() {
            let mut row = dh.row_mut(p);
            row += &dhs.row(i);
        }
        let _ = &mt.g;
    }

    let stop = backprop_stop(&params.freeze, cfg.num_layers);
    if stop < cfg.num_layers || !params.freeze.embeddings {
        encode_back(w, cfg, &tr, dh, stop, grads);
    }
    loss
}

fn check_input(cfg: &EncoderConfig, ids: &[u32], mask: &[u8]) -> Result<()> {
    if ids.len() != mask.len() {
        return Err(Error::Dimension {
            expected: ids.len(),
            actual: mask.len(),
        });
    }
    if ids.is_empty() || ids.len() > cfg.max_seq_len {
        return Err(Error::Dimension {
            expected: cfg.max_seq_len,
            actual: ids.len(),
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::Validation {
            line: None,
            message: format!("token id {bad} outside vocabulary of {}", cfg.vocab_size),
        });
    }
    Ok(())
}

/// Inference forward pass (no dropout). Padding beyond the last real token
/// is never computed, so outputs do not depend on the padded length.
pub fn forward(params: &EncoderParams, ids: &[u32], mask: &[u8], capture: bool) -> Result<ForwardOutput> {
    forward_with(params, ids, mask, capture, false)
}

/// As [`forward`], optionally also returning masked-LM logits for every
/// position of the window.
pub fn forward_with(params: &EncoderParams, ids: &[u32], mask: &[u8], capture: bool, mlm: bool) -> Result<ForwardOutput> {
    let cfg = &params.config;
    check_input(cfg, ids, mask)?;
    let w = &params.weights;
    let n = window(mask);
    let valid: Vec<bool> = mask[..n].iter().map(|&m| m == 1).collect();
    let tr = encode(w, cfg, &ids[..n], &valid, None);
    let cls = cls_logits(w, tr.hidden.row(0)).to_vec();
    let mlm_logits = mlm.then(|| mlm_forward(w, cfg, &tr.hidden).0);
    let attention = capture.then(|| {
        let mut a = Array4::zeros((cfg.num_layers, cfg.num_heads, n, n));
        for (l, lt) in tr.layers.iter().enumerate() {
            for (h, p) in lt.probs.iter().enumerate() {
                a.slice_mut(s![l, h, .., ..]).assign(p);
            }
        }
        a
    });
    Ok(ForwardOutput {
        cls_logits: cls,
        mlm_logits,
        attention,
    })
}
