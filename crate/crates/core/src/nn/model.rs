//! Encoder, patch head, gated-attention pooling and slide head, with
//! hand-derived reverse-mode gradients.
//!
//! All parameters live in one flat `f64` buffer; [`Tensor`] names the slices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::descriptor::{Descriptor, DESCRIPTOR_DIM, LUMA_BINS, MAG_BINS, ORIENT_BINS};
use super::loss::{weighted_bce, weighted_bce_grad};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = DESCRIPTOR_DIM;
pub const ENC_HIDDEN: usize = 64;
pub const EMBED_DIM: usize = 32;
pub const ATTN_DIM: usize = 16;
pub const HEAD_HIDDEN: usize = 128;
pub const DROPOUT: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

pub type Embedding = [f64; EMBED_DIM];

/// Named parameter arrays, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Enc1W,
    Enc1B,
    EncLnG,
    EncLnB,
    Enc2W,
    Enc2B,
    PatchW,
    PatchB,
    AttnV,
    AttnU,
    AttnW,
    Head1W,
    Head1B,
    HeadLnG,
    HeadLnB,
    Head2W,
    Head2B,
}

impl Tensor {
    pub const ALL: [Tensor; 17] = [
        Tensor::Enc1W,
        Tensor::Enc1B,
        Tensor::EncLnG,
        Tensor::EncLnB,
        Tensor::Enc2W,
        Tensor::Enc2B,
        Tensor::PatchW,
        Tensor::PatchB,
        Tensor::AttnV,
        Tensor::AttnU,
        Tensor::AttnW,
        Tensor::Head1W,
        Tensor::Head1B,
        Tensor::HeadLnG,
        Tensor::HeadLnB,
        Tensor::Head2W,
        Tensor::Head2B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Enc1W => "encoder.fc1.weight",
            Tensor::Enc1B => "encoder.fc1.bias",
            Tensor::EncLnG => "encoder.norm.weight",
            Tensor::EncLnB => "encoder.norm.bias",
            Tensor::Enc2W => "encoder.fc2.weight",
            Tensor::Enc2B => "encoder.fc2.bias",
            Tensor::PatchW => "patch_head.weight",
            Tensor::PatchB => "patch_head.bias",
            Tensor::AttnV => "attention.v",
            Tensor::AttnU => "attention.u",
            Tensor::AttnW => "attention.w",
            Tensor::Head1W => "slide_head.fc1.weight",
            Tensor::Head1B => "slide_head.fc1.bias",
            Tensor::HeadLnG => "slide_head.norm.weight",
            Tensor::HeadLnB => "slide_head.norm.bias",
            Tensor::Head2W => "slide_head.fc2.weight",
            Tensor::Head2B => "slide_head.fc2.bias",
        }
    }

    pub fn shape(self) -> &'static [usize] {
        match self {
            Tensor::Enc1W => &[ENC_HIDDEN, INPUT_DIM],
            Tensor::Enc1B | Tensor::EncLnG | Tensor::EncLnB => &[ENC_HIDDEN],
            Tensor::Enc2W => &[EMBED_DIM, ENC_HIDDEN],
            Tensor::Enc2B => &[EMBED_DIM],
            Tensor::PatchW => &[1, EMBED_DIM],
            Tensor::PatchB | Tensor::Head2B => &[1],
            Tensor::AttnV | Tensor::AttnU => &[ATTN_DIM, EMBED_DIM],
            Tensor::AttnW => &[ATTN_DIM],
            Tensor::Head1W => &[HEAD_HIDDEN, EMBED_DIM],
            Tensor::Head1B | Tensor::HeadLnG | Tensor::HeadLnB => &[HEAD_HIDDEN],
            Tensor::Head2W => &[1, HEAD_HIDDEN],
        }
    }

    pub fn len(self) -> usize {
        self.shape().iter().product()
    }

    pub fn offset(self) -> usize {
        Tensor::ALL.iter().take_while(|&&t| t != self).map(|t| t.len()).sum()
    }

    pub fn range(self) -> std::ops::Range<usize> {
        let o = OFFSETS[self as usize];
        o..o + self.len()
    }

    pub fn by_name(name: &str) -> Option<Tensor> {
        Tensor::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Parameters of the encoder and patch head (trained in the patch step).
    pub fn is_patch_model(self) -> bool {
        (self as usize) <= Tensor::PatchB as usize
    }
}

static OFFSETS: std::sync::LazyLock<[usize; 17]> = std::sync::LazyLock::new(|| Tensor::ALL.map(|t| t.offset()));

pub fn param_count() -> usize {
    Tensor::ALL.iter().map(|t| t.len()).sum()
}

/// Per-block input scaling: histogram blocks are rescaled so a uniform
/// histogram maps to ones.
fn input_scale(i: usize) -> f64 {
    if i < LUMA_BINS {
        LUMA_BINS as f64
    } else if i < LUMA_BINS + ORIENT_BINS {
        ORIENT_BINS as f64
    } else if i < LUMA_BINS + ORIENT_BINS + MAG_BINS {
        MAG_BINS as f64
    } else {
        1.0
    }
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; param_count()],
        }
    }

    /// Uniform fan-in initialization; layer norms start as identity.
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros();
        for t in Tensor::ALL {
            let fan_in = match t {
                Tensor::Enc1W | Tensor::Enc1B => INPUT_DIM,
                Tensor::Enc2W | Tensor::Enc2B => ENC_HIDDEN,
                Tensor::PatchW | Tensor::PatchB | Tensor::AttnV | Tensor::AttnU | Tensor::Head1W | Tensor::Head1B => {
                    EMBED_DIM
                }
                Tensor::AttnW => ATTN_DIM,
                Tensor::Head2W | Tensor::Head2B => HEAD_HIDDEN,
                Tensor::EncLnG | Tensor::HeadLnG => {
                    p.get_mut(t).fill(1.0);
                    continue;
                }
                Tensor::EncLnB | Tensor::HeadLnB => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in p.get_mut(t) {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn get(&self, t: Tensor) -> &[f64] {
        &self.data[t.range()]
    }

    pub fn get_mut(&mut self, t: Tensor) -> &mut [f64] {
        &mut self.data[t.range()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round every weight to the nearest `f32`, the checkpoint precision.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Copy the encoder and patch-head weights from another model.
    pub fn transfer_patch_weights(&mut self, from: &ModelParams) {
        for t in Tensor::ALL.into_iter().filter(|t| t.is_patch_model()) {
            self.get_mut(t).copy_from_slice(from.get(t));
        }
    }
}

#[inline]
fn matvec(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, (row, bi)) in out.iter_mut().zip(w.chunks_exact(n).zip(b)) {
        *o = bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: f64,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64]) -> LnCache {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    for i in 0..x.len() {
        out[i] = g[i] * xhat[i] + b[i];
    }
    LnCache { xhat, inv_std }
}

/// Backward through `y = g * xhat + b`. Accumulates `dg`, `db`, returns `dx`.
fn layer_norm_backward(c: &LnCache, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = dy.len();
    let mut dxhat = vec![0.0; n];
    for i in 0..n {
        dg[i] += dy[i] * c.xhat[i];
        db[i] += dy[i];
        dxhat[i] = dy[i] * g[i];
    }
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(&c.xhat).map(|(a, b)| a * b).sum();
    (0..n)
        .map(|i| c.inv_std / n as f64 * (n as f64 * dxhat[i] - s1 - c.xhat[i] * s2))
        .collect()
}

struct EncoderCache {
    xs: [f64; INPUT_DIM],
    ln: LnCache,
    y: [f64; ENC_HIDDEN],
    r: [f64; ENC_HIDDEN],
    h: Embedding,
}

fn encoder_forward(p: &ModelParams, x: &Descriptor) -> EncoderCache {
    let mut xs = [0.0; INPUT_DIM];
    for i in 0..INPUT_DIM {
        xs[i] = x[i] * input_scale(i);
    }
    let mut a1 = [0.0; ENC_HIDDEN];
    matvec(p.get(Tensor::Enc1W), p.get(Tensor::Enc1B), &xs, &mut a1);
    let mut y = [0.0; ENC_HIDDEN];
    let ln = layer_norm(&a1, p.get(Tensor::EncLnG), p.get(Tensor::EncLnB), &mut y);
    let r = y.map(|v| v.max(0.0));
    let mut h = [0.0; EMBED_DIM];
    matvec(p.get(Tensor::Enc2W), p.get(Tensor::Enc2B), &r, &mut h);
    EncoderCache { xs, ln, y, r, h }
}

fn encoder_backward(p: &ModelParams, c: &EncoderCache, dh: &[f64], g: &mut ModelParams) {
    let w2 = p.get(Tensor::Enc2W);
    let mut dr = [0.0; ENC_HIDDEN];
    {
        let gw2 = &mut g.data[Tensor::Enc2W.range()];
        for o in 0..EMBED_DIM {
            let row = &mut gw2[o * ENC_HIDDEN..(o + 1) * ENC_HIDDEN];
            for i in 0..ENC_HIDDEN {
                row[i] += dh[o] * c.r[i];
                dr[i] += w2[o * ENC_HIDDEN + i] * dh[o];
            }
        }
    }
    for (b, d) in g.get_mut(Tensor::Enc2B).iter_mut().zip(dh) {
        *b += d;
    }
    let dy: Vec<f64> = (0..ENC_HIDDEN).map(|i| if c.y[i] > 0.0 { dr[i] } else { 0.0 }).collect();
    let (mut dgam, mut dbet) = (vec![0.0; ENC_HIDDEN], vec![0.0; ENC_HIDDEN]);
    let da = layer_norm_backward(&c.ln, p.get(Tensor::EncLnG), &dy, &mut dgam, &mut dbet);
    for (a, b) in g.get_mut(Tensor::EncLnG).iter_mut().zip(&dgam) {
        *a += b;
    }
    for (a, b) in g.get_mut(Tensor::EncLnB).iter_mut().zip(&dbet) {
        *a += b;
    }
    let gw1 = &mut g.data[Tensor::Enc1W.range()];
    for o in 0..ENC_HIDDEN {
        let row = &mut gw1[o * INPUT_DIM..(o + 1) * INPUT_DIM];
        for i in 0..INPUT_DIM {
            row[i] += da[o] * c.xs[i];
        }
    }
    for (b, d) in g.get_mut(Tensor::Enc1B).iter_mut().zip(&da) {
        *b += d;
    }
}

/// Embed one descriptor.
pub fn encode(p: &ModelParams, x: &Descriptor) -> Embedding {
    encoder_forward(p, x).h
}

fn patch_logit(p: &ModelParams, h: &Embedding) -> f64 {
    p.get(Tensor::PatchB)[0] + p.get(Tensor::PatchW).iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
}

/// Patch-level probability of the sieve pattern.
pub fn patch_prob(p: &ModelParams, x: &Descriptor) -> f64 {
    sigmoid(patch_logit(p, &encode(p, x)))
}

/// Mean weighted BCE over a patch batch, and its gradient.
pub fn patch_batch_loss_grad(
    p: &ModelParams,
    xs: &[&Descriptor],
    ys: &[bool],
    pos_weight: f64,
) -> Result<(f64, ModelParams)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("patch batch must be nonempty with one label per patch"));
    }
    let mut g = ModelParams::zeros();
    let inv_n = 1.0 / xs.len() as f64;
    let mut loss = 0.0;
    let wp = p.get(Tensor::PatchW).to_vec();
    for (x, &y) in xs.iter().zip(ys) {
        let c = encoder_forward(p, x);
        let prob = sigmoid(patch_logit(p, &c.h));
        loss += weighted_bce(prob, y, pos_weight) * inv_n;
        let dlogit = weighted_bce_grad(prob, y, pos_weight) * prob * (1.0 - prob) * inv_n;
        for (gw, hv) in g.get_mut(Tensor::PatchW).iter_mut().zip(&c.h) {
            *gw += dlogit * hv;
        }
        g.get_mut(Tensor::PatchB)[0] += dlogit;
        let dh: Vec<f64> = wp.iter().map(|w| w * dlogit).collect();
        encoder_backward(p, &c, &dh, &mut g);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, g))
}

/// Attention weights and pooled slide feature.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub weights: Vec<f64>,
    pub z: Embedding,
}

struct AttnCache {
    t: Vec<[f64; ATTN_DIM]>,
    s: Vec<[f64; ATTN_DIM]>,
    out: AttentionOutput,
}

fn attention_forward(p: &ModelParams, hs: &[Embedding]) -> Result<AttnCache> {
    if hs.is_empty() {
        return Err(Error::invalid("attention pooling needs at least one instance"));
    }
    let (v, u, w) = (p.get(Tensor::AttnV), p.get(Tensor::AttnU), p.get(Tensor::AttnW));
    let zero = [0.0; ATTN_DIM];
    let mut ts = Vec::with_capacity(hs.len());
    let mut ss = Vec::with_capacity(hs.len());
    let mut e = Vec::with_capacity(hs.len());
    for h in hs {
        let (mut t, mut s) = ([0.0; ATTN_DIM], [0.0; ATTN_DIM]);
        matvec(v, &zero, h, &mut t);
        matvec(u, &zero, h, &mut s);
        let mut score = 0.0;
        for l in 0..ATTN_DIM {
            t[l] = t[l].tanh();
            s[l] = sigmoid(s[l]);
            score += w[l] * t[l] * s[l];
        }
        ts.push(t);
        ss.push(s);
        e.push(score);
    }
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = ex.iter().sum();
    let weights: Vec<f64> = ex.iter().map(|v| v / total).collect();
    let mut z = [0.0; EMBED_DIM];
    for (a, h) in weights.iter().zip(hs) {
        for d in 0..EMBED_DIM {
            z[d] += a * h[d];
        }
    }
    Ok(AttnCache {
        t: ts,
        s: ss,
        out: AttentionOutput { weights, z },
    })
}

/// Gated attention pooling: `a = softmax(w . (tanh(V h) * sigmoid(U h)))`,
/// `z = sum a_k h_k`.
pub fn gated_attention_pool(p: &ModelParams, hs: &[Embedding]) -> Result<AttentionOutput> {
    Ok(attention_forward(p, hs)?.out)
}

/// Inverted-dropout mask for the slide head (entries 0 or `1/(1-rate)`).
pub fn dropout_mask(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - DROPOUT);
    (0..HEAD_HIDDEN)
        .map(|_| if rng.random::<f64>() < DROPOUT { 0.0 } else { keep })
        .collect()
}

struct HeadCache {
    ln: LnCache,
    y: Vec<f64>,
    d: Vec<f64>,
    prob: f64,
}

fn head_forward(p: &ModelParams, z: &Embedding, mask: Option<&[f64]>) -> HeadCache {
    let mut q = vec![0.0; HEAD_HIDDEN];
    matvec(p.get(Tensor::Head1W), p.get(Tensor::Head1B), z, &mut q);
    let mut y = vec![0.0; HEAD_HIDDEN];
    let ln = layer_norm(&q, p.get(Tensor::HeadLnG), p.get(Tensor::HeadLnB), &mut y);
    let d: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, v)| v.max(0.0) * mask.map_or(1.0, |m| m[i]))
        .collect();
    let o = p.get(Tensor::Head2B)[0] + p.get(Tensor::Head2W).iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
    HeadCache {
        ln,
        y,
        d,
        prob: sigmoid(o),
    }
}

/// Slide probability for a bag of descriptors. Pass `None` for inference
/// (no dropout).
pub fn slide_prob(p: &ModelParams, bag: &[Descriptor], mask: Option<&[f64]>) -> Result<f64> {
    let hs: Vec<Embedding> = bag.iter().map(|x| encode(p, x)).collect();
    let att = attention_forward(p, &hs)?;
    Ok(head_forward(p, &att.out.z, mask).prob)
}

/// Weighted BCE of one bag and its gradient with respect to every parameter.
pub fn slide_loss_grad(
    p: &ModelParams,
    bag: &[Descriptor],
    y: bool,
    pos_weight: f64,
    mask: Option<&[f64]>,
) -> Result<(f64, f64, ModelParams)> {
    if let Some(m) = mask {
        if m.len() != HEAD_HIDDEN {
            return Err(Error::invalid("dropout mask has the wrong length"));
        }
    }
    let encs: Vec<EncoderCache> = bag.iter().map(|x| encoder_forward(p, x)).collect();
    let hs: Vec<Embedding> = encs.iter().map(|c| c.h).collect();
    let att = attention_forward(p, &hs)?;
    let head = head_forward(p, &att.out.z, mask);
    let prob = head.prob;
    let loss = weighted_bce(prob, y, pos_weight);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut g = ModelParams::zeros();
    let dout = weighted_bce_grad(prob, y, pos_weight) * prob * (1.0 - prob);

    // Slide head.
    let w2 = p.get(Tensor::Head2W);
    g.get_mut(Tensor::Head2B)[0] += dout;
    let mut dy = vec![0.0; HEAD_HIDDEN];
    for i in 0..HEAD_HIDDEN {
        g.data[Tensor::Head2W.range().start + i] += dout * head.d[i];
        let dd = dout * w2[i];
        let m = mask.map_or(1.0, |m| m[i]);
        dy[i] = if head.y[i] > 0.0 { dd * m } else { 0.0 };
    }
    let (mut dgam, mut dbet) = (vec![0.0; HEAD_HIDDEN], vec![0.0; HEAD_HIDDEN]);
    let dq = layer_norm_backward(&head.ln, p.get(Tensor::HeadLnG), &dy, &mut dgam, &mut dbet);
    for (a, b) in g.get_mut(Tensor::HeadLnG).iter_mut().zip(&dgam) {
        *a += b;
    }
    for (a, b) in g.get_mut(Tensor::HeadLnB).iter_mut().zip(&dbet) {
        *a += b;
    }
    let z = &att.out.z;
    let w1 = p.get(Tensor::Head1W);
    let mut dz = [0.0; EMBED_DIM];
    {
        let r1 = Tensor::Head1W.range().start;
        for o in 0..HEAD_HIDDEN {
            for i in 0..EMBED_DIM {
                g.data[r1 + o * EMBED_DIM + i] += dq[o] * z[i];
                dz[i] += w1[o * EMBED_DIM + i] * dq[o];
            }
        }
    }
    for (a, b) in g.get_mut(Tensor::Head1B).iter_mut().zip(&dq) {
        *a += b;
    }

    // Attention pooling.
    let a = &att.out.weights;
    let da: Vec<f64> = hs
        .iter()
        .map(|h| h.iter().zip(&dz).map(|(x, y)| x * y).sum())
        .collect();
    let mean_da: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
    let (v, u, w) = (p.get(Tensor::AttnV), p.get(Tensor::AttnU), p.get(Tensor::AttnW));
    let (rv, ru, rw) = (
        Tensor::AttnV.range().start,
        Tensor::AttnU.range().start,
        Tensor::AttnW.range().start,
    );
    for k in 0..hs.len() {
        let de = a[k] * (da[k] - mean_da);
        let (t, s, h) = (&att.t[k], &att.s[k], &hs[k]);
        let mut dh = [0.0; EMBED_DIM];
        for d in 0..EMBED_DIM {
            dh[d] = a[k] * dz[d];
        }
        for l in 0..ATTN_DIM {
            g.data[rw + l] += de * t[l] * s[l];
            let dg = de * w[l];
            let dpre_t = dg * s[l] * (1.0 - t[l] * t[l]);
            let dpre_s = dg * t[l] * s[l] * (1.0 - s[l]);
            for d in 0..EMBED_DIM {
                g.data[rv + l * EMBED_DIM + d] += dpre_t * h[d];
                g.data[ru + l * EMBED_DIM + d] += dpre_s * h[d];
                dh[d] += v[l * EMBED_DIM + d] * dpre_t + u[l * EMBED_DIM + d] * dpre_s;
            }
        }
        encoder_backward(p, &encs[k], &dh, &mut g);
    }
    Ok((loss, prob, g))
}

/// Loss of one bag without gradients (used by finite-difference checks).
pub fn slide_loss(p: &ModelParams, bag: &[Descriptor], y: bool, pos_weight: f64, mask: Option<&[f64]>) -> Result<f64> {
    let prob = slide_prob(p, bag, mask)?;
    Ok(weighted_bce(prob, y, pos_weight))
}

/// Mean patch loss without gradients.
pub fn patch_batch_loss(p: &ModelParams, xs: &[&Descriptor], ys: &[bool], pos_weight: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| weighted_bce(patch_prob(p, x), y, pos_weight))
        .sum::<f64>()
        / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_desc(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut d = [0.0; DESCRIPTOR_DIM];
        for v in &mut d {
            *v = rng.random::<f64>() * 0.2;
        }
        d
    }

    #[test]
    fn layout_is_contiguous() {
        let mut end = 0;
        for t in Tensor::ALL {
            assert_eq!(t.range().start, end);
            end = t.range().end;
            assert_eq!(Tensor::by_name(t.name()), Some(t));
        }
        assert_eq!(end, param_count());
    }

    #[test]
    fn singleton_bag_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(&mut rng);
        let h = encode(&p, &rand_desc(&mut rng));
        let out = gated_attention_pool(&p, &[h]).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.z, h);
        assert!(gated_attention_pool(&p, &[]).is_err());
    }

    #[test]
    fn identical_instances_get_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(&mut rng);
        let h = encode(&p, &rand_desc(&mut rng));
        let out = gated_attention_pool(&p, &[h; 7]).unwrap();
        for a in &out.weights {
            assert!((a - 1.0 / 7.0).abs() < 1e-15);
        }
        for d in 0..EMBED_DIM {
            assert!((out.z[d] - h[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_ignores_rng_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(&mut rng);
        let bag: Vec<Descriptor> = (0..4).map(|_| rand_desc(&mut rng)).collect();
        let a = slide_prob(&p, &bag, None).unwrap();
        let _ = dropout_mask(&mut rng);
        let b = slide_prob(&p, &bag, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_bag_gives_symmetric_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = ModelParams::init(&mut rng);
        p.get_mut(Tensor::AttnW).fill(0.0);
        let x = rand_desc(&mut rng);
        let (_, _, g1) = slide_loss_grad(&p, &[x, x], true, 1.0, None).unwrap();
        let (_, _, g2) = slide_loss_grad(&p, &[x], true, 1.0, None).unwrap();
        // Two identical instances contribute equally, so the pooled gradient
        // matches the singleton bag.
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}
