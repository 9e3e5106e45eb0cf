use alloc::vec;
use alloc::vec::Vec;

use super::{LayerOffsets, ModelParams, NormOffsets, LN_EPS};
use crate::linalg::{gemm, Trans};
use crate::math;
use crate::{Error, Result};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + math::tanh(GELU_K * (u + GELU_C * u * u * u)))
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = math::tanh(GELU_K * (u + GELU_C * u * u * u));
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * u * u)
}

/// Saved layer-norm quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache {
    /// `gamma * nhat + beta`.
    pub out: Vec<f64>,
    pub(crate) nhat: Vec<f64>,
    pub(crate) rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], d: usize, data: &[f64], off: NormOffsets) -> NormCache {
    let gamma = &data[off.gamma..off.gamma + d];
    let beta = &data[off.beta..off.beta + d];
    let n = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut nhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / math::sqrt(var + LN_EPS);
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            nhat[r * d + j] = h;
            out[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    NormCache { out, nhat, rstd }
}

/// Activations of one transformer block over a batch.
///
/// Row `b * seq_len + t` of every `rows × width` buffer belongs to position `t`
/// of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Residual stream entering the block.
    pub x_pre: Vec<f64>,
    /// After attention.
    pub x_mid: Vec<f64>,
    /// After the MLP.
    pub x_post: Vec<f64>,
    /// Per head, `batch × seq_len × seq_len` attention weights (destination
    /// rows, zero above the diagonal).
    pub attn: Vec<Vec<f64>>,
    /// Per head, `v_s = W_O W_V x_s` for every source row, `rows × d_model`.
    pub values: Vec<Vec<f64>>,
    pub(crate) ln1: Option<NormCache>,
    pub(crate) q: Vec<Vec<f64>>,
    pub(crate) k: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) ln2: Option<NormCache>,
    pub(crate) u: Vec<f64>,
    pub(crate) g: Vec<f64>,
}

impl LayerTrace {
    /// Input the attention heads read: `x_pre`, or its normalization.
    pub fn attn_input(&self) -> &[f64] {
        self.ln1.as_ref().map_or(&self.x_pre, |c| &c.out)
    }

    pub(crate) fn mlp_input(&self) -> &[f64] {
        self.ln2.as_ref().map_or(&self.x_mid, |c| &c.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub batch: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub layers: Vec<LayerTrace>,
    pub(crate) final_ln: Option<NormCache>,
    /// `rows × vocab`.
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }

    /// Attention weight of destination `d` on source `s` in sequence `b`.
    pub fn attention(&self, layer: usize, head: usize, b: usize, d: usize, s: usize) -> f64 {
        let t = self.seq_len;
        self.layers[layer].attn[head][b * t * t + d * t + s]
    }

    pub fn row<'a>(&self, buf: &'a [f64], b: usize, t: usize) -> &'a [f64] {
        let r = b * self.seq_len + t;
        &buf[r * self.d_model..(r + 1) * self.d_model]
    }

    pub fn logits_row(&self, b: usize, t: usize) -> &[f64] {
        let r = b * self.seq_len + t;
        &self.logits[r * self.vocab..(r + 1) * self.vocab]
    }

    pub(crate) fn unembed_input(&self) -> &[f64] {
        match &self.final_ln {
            Some(c) => &c.out,
            None => &self.layers.last().expect("at least one layer").x_post,
        }
    }
}

fn check_input(params: &ModelParams, tokens: &[u8], len: usize) -> Result<()> {
    let c = &params.config;
    if len == 0 || len > c.max_ctx {
        return Err(Error::Context { len, max_ctx: c.max_ctx });
    }
    if tokens.len() % len != 0 {
        return Err(Error::Config(alloc::format!(
            "{} tokens do not split into sequences of length {len}",
            tokens.len()
        )));
    }
    if let Some(&z) = tokens.iter().find(|&&z| z as usize >= c.vocab) {
        return Err(Error::InvalidToken { token: z, vocab: c.vocab });
    }
    Ok(())
}

/// Runs one sequence of length `1..=max_ctx`.
pub fn forward(params: &ModelParams, tokens: &[u8]) -> Result<ForwardTrace> {
    if tokens.is_empty() {
        return Err(Error::Context { len: 0, max_ctx: params.config.max_ctx });
    }
    forward_batch(params, tokens, tokens.len())
}

/// Runs `tokens.len() / len` sequences of length `len` together.
pub fn forward_batch(params: &ModelParams, tokens: &[u8], len: usize) -> Result<ForwardTrace> {
    check_input(params, tokens, len)?;
    let c = &params.config;
    let lay = &params.layout;
    let w = &params.data;
    let (d, vocab) = (c.d_model, c.vocab);
    let rows = tokens.len();
    let batch = rows / len;

    let mut x = vec![0.0; rows * d];
    for (r, &z) in tokens.iter().enumerate() {
        let t = r % len;
        let tok = &w[lay.token_embed + z as usize * d..][..d];
        let pos = &w[lay.pos_embed + t * d..][..d];
        for j in 0..d {
            x[r * d + j] = tok[j] + pos[j];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for lo in &lay.layers {
        let lt = block_forward(params, lo, x, batch, len);
        x = lt.x_post.clone();
        layers.push(lt);
    }

    let final_ln = lay.final_ln.map(|off| layer_norm(&x, d, w, off));
    let h = final_ln.as_ref().map_or(&x, |c| &c.out);
    let mut logits = vec![0.0; rows * vocab];
    gemm(rows, d, vocab, h, Trans::No, &w[lay.unembed..], Trans::No, &mut logits, 0.0);
    Ok(ForwardTrace { batch, seq_len: len, d_model: d, vocab, layers, final_ln, logits })
}

fn block_forward(params: &ModelParams, lo: &LayerOffsets, x_pre: Vec<f64>, batch: usize, len: usize) -> LayerTrace {
    let c = &params.config;
    let w = &params.data;
    let (d, dh, ff) = (c.d_model, c.head_dim(), c.d_ff);
    let rows = batch * len;
    let scale = 1.0 / math::sqrt(dh as f64);

    let ln1 = lo.ln1.map(|off| layer_norm(&x_pre, d, w, off));
    let h = ln1.as_ref().map_or(&x_pre, |c| &c.out);

    let mut x_mid = x_pre.clone();
    let (mut qs, mut ks, mut vs, mut attns, mut values) = (vec![], vec![], vec![], vec![], vec![]);
    let mut scores = vec![0.0; len];
    for ho in &lo.heads {
        let mut q = vec![0.0; rows * dh];
        let mut k = vec![0.0; rows * dh];
        let mut v = vec![0.0; rows * dh];
        gemm(rows, d, dh, h, Trans::No, &w[ho.w_q..], Trans::Yes, &mut q, 0.0);
        gemm(rows, d, dh, h, Trans::No, &w[ho.w_k..], Trans::Yes, &mut k, 0.0);
        gemm(rows, d, dh, h, Trans::No, &w[ho.w_v..], Trans::Yes, &mut v, 0.0);
        let mut vo = vec![0.0; rows * d];
        gemm(rows, dh, d, &v, Trans::No, &w[ho.w_o..], Trans::Yes, &mut vo, 0.0);

        let mut attn = vec![0.0; batch * len * len];
        for b in 0..batch {
            for t in 0..len {
                let qr = &q[(b * len + t) * dh..][..dh];
                for s in 0..=t {
                    let kr = &k[(b * len + s) * dh..][..dh];
                    scores[s] = scale * qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
                }
                let a = &mut attn[b * len * len + t * len..][..=t];
                super::softmax_into(&scores[..=t], a);
                let out = &mut x_mid[(b * len + t) * d..][..d];
                for (s, &weight) in a.iter().enumerate() {
                    let vr = &vo[(b * len + s) * d..][..d];
                    for j in 0..d {
                        out[j] += weight * vr[j];
                    }
                }
            }
        }
        qs.push(q);
        ks.push(k);
        vs.push(v);
        attns.push(attn);
        values.push(vo);
    }

    let ln2 = lo.ln2.map(|off| layer_norm(&x_mid, d, w, off));
    let h2 = ln2.as_ref().map_or(&x_mid, |c| &c.out);
    let mut u = vec![0.0; rows * ff];
    gemm(rows, d, ff, h2, Trans::No, &w[lo.w_in..], Trans::Yes, &mut u, 0.0);
    let b_in = &w[lo.b_in..lo.b_in + ff];
    for row in u.chunks_exact_mut(ff) {
        row.iter_mut().zip(b_in).for_each(|(v, b)| *v += b);
    }
    let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
    let mut x_post = x_mid.clone();
    gemm(rows, ff, d, &g, Trans::No, &w[lo.w_out..], Trans::Yes, &mut x_post, 1.0);
    let b_out = &w[lo.b_out..lo.b_out + d];
    for row in x_post.chunks_exact_mut(d) {
        row.iter_mut().zip(b_out).for_each(|(v, b)| *v += b);
    }

    LayerTrace { x_pre, x_mid, x_post, attn: attns, values, ln1, q: qs, k: ks, v: vs, ln2, u, g }
}
