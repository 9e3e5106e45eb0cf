//! A small decoder-only transformer with a hand-derived backward pass.
//!
//! Weight matrices are stored `out × in` and act on row vectors as
//! `y = x W^T`, except the unembedding, which is `d_model × vocab`. All
//! parameters live in one flat buffer described by a [`Layout`].

mod backward;
mod forward;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::math;
use crate::{Error, Result};

pub use backward::{backward, batch_loss_and_grad, BatchGrad};
pub use forward::{forward, forward_batch, ForwardTrace, LayerTrace};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub vocab: usize,
    pub max_ctx: usize,
    /// Pre-norm layer normalization before attention, MLP and unembedding.
    #[serde(default)]
    pub layer_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 64, d_ff: 256, n_heads: 1, n_layers: 1, vocab: 3, max_ctx: 10, layer_norm: false }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("vocab", self.vocab),
            ("max_ctx", self.max_ctx),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab > 256 {
            return Err(Error::Config(format!("vocab {} does not fit in u8 tokens", self.vocab)));
        }
        Ok(())
    }
}

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormOffsets {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct HeadOffsets {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_o: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1: Option<NormOffsets>,
    pub heads: Vec<HeadOffsets>,
    pub ln2: Option<NormOffsets>,
    pub w_in: usize,
    pub b_in: usize,
    pub w_out: usize,
    pub b_out: usize,
}

/// Where each parameter tensor sits in the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) token_embed: usize,
    pub(crate) pos_embed: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_ln: Option<NormOffsets>,
    pub(crate) unembed: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum InitKind {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    kinds: Vec<InitKind>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: InitKind) -> usize {
        let offset = self.total;
        let len: usize = shape.iter().product();
        self.tensors.push(TensorSpec { name, shape, offset });
        self.kinds.push(kind);
        self.total += len;
        offset
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.push(name, vec![rows, cols], InitKind::Glorot { fan_in: cols, fan_out: rows })
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormOffsets {
        NormOffsets {
            gamma: self.push(format!("{prefix}.gamma"), vec![d], InitKind::Ones),
            beta: self.push(format!("{prefix}.beta"), vec![d], InitKind::Zeros),
        }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Vec<InitKind>) {
    let mut b = Builder { tensors: Vec::new(), kinds: Vec::new(), total: 0 };
    let (d, dh, ff) = (c.d_model, c.head_dim(), c.d_ff);
    let token_embed = b.matrix("embed.token".into(), c.vocab, d);
    let pos_embed = b.push("embed.pos".into(), vec![c.max_ctx, d], InitKind::Zeros);
    let mut layers = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let ln1 = c.layer_norm.then(|| b.norm(&format!("layer{l}.ln1"), d));
        let heads = (0..c.n_heads)
            .map(|h| HeadOffsets {
                w_q: b.matrix(format!("layer{l}.head{h}.w_q"), dh, d),
                w_k: b.matrix(format!("layer{l}.head{h}.w_k"), dh, d),
                w_v: b.matrix(format!("layer{l}.head{h}.w_v"), dh, d),
                w_o: b.matrix(format!("layer{l}.head{h}.w_o"), d, dh),
            })
            .collect();
        let ln2 = c.layer_norm.then(|| b.norm(&format!("layer{l}.ln2"), d));
        let w_in = b.matrix(format!("layer{l}.mlp.w_in"), ff, d);
        let b_in = b.push(format!("layer{l}.mlp.b_in"), vec![ff], InitKind::Zeros);
        let w_out = b.matrix(format!("layer{l}.mlp.w_out"), d, ff);
        let b_out = b.push(format!("layer{l}.mlp.b_out"), vec![d], InitKind::Zeros);
        layers.push(LayerOffsets { ln1, heads, ln2, w_in, b_in, w_out, b_out });
    }
    let final_ln = c.layer_norm.then(|| b.norm("final_ln", d));
    let unembed = b.matrix("unembed".into(), d, c.vocab);
    let layout = Layout { tensors: b.tensors, total: b.total, token_embed, pos_embed, layers, final_ln, unembed };
    (layout, b.kinds)
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        build_layout(config).0
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Model weights in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self { config, layout, data })
    }

    /// Wraps an existing buffer, checking its length against the layout.
    pub fn from_data(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.layout.total {
            return Err(Error::Config(format!(
                "parameter buffer has {} entries, layout needs {}",
                data.len(),
                p.layout.total
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.layout.tensors {
            if self.data[t.range()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t.name.clone()));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weight matrices, zero biases and positional embeddings,
/// unit layer-norm gains.
pub fn init_model<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<ModelParams> {
    config.validate()?;
    let (layout, kinds) = build_layout(&config);
    let mut data = vec![0.0; layout.total];
    for (t, kind) in layout.tensors.iter().zip(&kinds) {
        let slice = &mut data[t.range()];
        match *kind {
            InitKind::Glorot { fan_in, fan_out } => {
                let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
                for v in slice.iter_mut() {
                    *v = rng.gen_range(-a..a);
                }
            }
            InitKind::Zeros => {}
            InitKind::Ones => slice.fill(1.0),
        }
    }
    Ok(ModelParams { config, layout, data })
}

/// Mean cross-entropy of `logits` (`n × vocab`, row-major) against `targets`.
pub fn cross_entropy(logits: &[f64], vocab: usize, targets: &[u8]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for (row, &t) in logits.chunks_exact(vocab).zip(targets) {
        total += log_sum_exp(row) - row[t as usize];
    }
    total / n as f64
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + math::ln(row.iter().map(|&v| math::exp(v - m)).sum::<f64>())
}

/// Softmax of one row into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = math::exp(v - m);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Mean next-token cross-entropy of a forward trace against `targets`.
pub fn loss(trace: &ForwardTrace, targets: &[u8]) -> Result<f64> {
    if targets.len() != trace.rows() {
        return Err(Error::Config(format!(
            "{} targets for {} positions",
            targets.len(),
            trace.rows()
        )));
    }
    crate::hmm::check_tokens(targets)?;
    Ok(cross_entropy(&trace.logits, trace.vocab, targets))
}

/// Largest relative disagreement between the analytic gradient and central
/// differences over `n_coords` randomly drawn parameters.
///
/// Relative error is `|g - g_fd| / max(|g|, |g_fd|, 1e-6)`.
pub fn grad_check<R: Rng + ?Sized>(
    params: &ModelParams,
    tokens: &[u8],
    targets: &[u8],
    eps: f64,
    n_coords: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_coords == 0 {
        return Err(Error::Empty("grad_check needs at least one coordinate"));
    }
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Domain { name: "eps", range: "[1e-7, 1e-3]", value: eps });
    }
    let (_, grad) = backward(params, tokens, targets)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_coords {
        let i = rng.gen_range(0..params.data.len());
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = loss(&forward(&probe, tokens)?, targets)?;
        probe.data[i] = orig - eps;
        let down = loss(&forward(&probe, tokens)?, targets)?;
        probe.data[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let denom = grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((grad[i] - fd).abs() / denom);
    }
    Ok(worst)
}

/// Next-token log-probabilities at every position of every length-`len`
/// sequence in `tokens` (`batch × len`, row-major), computed in chunks.
pub fn log_probs_batched<E: Executor>(
    params: &ModelParams,
    tokens: &[u8],
    len: usize,
    exec: &E,
    chunk: usize,
) -> Result<Vec<f64>> {
    let batch = tokens.len() / len.max(1);
    let vocab = params.config.vocab;
    let parts = exec.map_chunks(batch, chunk, |r| -> Result<Vec<f64>> {
        let trace = forward_batch(params, &tokens[r.start * len..r.end * len], len)?;
        let mut out = trace.logits;
        for row in out.chunks_exact_mut(vocab) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(out)
    });
    let mut out = Vec::with_capacity(batch * len * vocab);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
