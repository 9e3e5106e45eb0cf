use alloc::vec;
use alloc::vec::Vec;

use super::forward::{forward_batch, gelu_grad, ForwardTrace, LayerTrace, NormCache};
use super::{log_sum_exp, LayerOffsets, ModelParams, NormOffsets};
use crate::exec::Executor;
use crate::linalg::{gemm, Trans};
use crate::math;
use crate::{Error, Result};

/// Mean loss and its gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Loss and exact gradient for one sequence; the loss is the mean
/// cross-entropy over its positions.
pub fn backward(params: &ModelParams, tokens: &[u8], targets: &[u8]) -> Result<(f64, Vec<f64>)> {
    let g = batch_loss_and_grad(params, tokens, targets, tokens.len(), &crate::exec::Serial, 1)?;
    Ok((g.loss, g.grad))
}

/// Mean cross-entropy over every position of every sequence and its gradient.
///
/// Sequences are processed in chunks of `chunk`; per-chunk gradients are
/// summed in chunk order, so the result depends on `chunk` but not on the
/// executor.
pub fn batch_loss_and_grad<E: Executor>(
    params: &ModelParams,
    inputs: &[u8],
    targets: &[u8],
    len: usize,
    exec: &E,
    chunk: usize,
) -> Result<BatchGrad> {
    if inputs.len() != targets.len() {
        return Err(Error::Config(alloc::format!("{} inputs but {} targets", inputs.len(), targets.len())));
    }
    if let Some(&z) = targets.iter().find(|&&z| z as usize >= params.config.vocab) {
        return Err(Error::InvalidToken { token: z, vocab: params.config.vocab });
    }
    if len == 0 {
        return Err(Error::Context { len: 0, max_ctx: params.config.max_ctx });
    }
    let batch = inputs.len() / len;
    let scale = 1.0 / inputs.len() as f64;
    let parts = exec.map_chunks(batch, chunk, |r| -> Result<(f64, Vec<f64>)> {
        let span = r.start * len..r.end * len;
        let trace = forward_batch(params, &inputs[span.clone()], len)?;
        let mut grad = vec![0.0; params.data.len()];
        let ce = backward_trace(params, &trace, &inputs[span.clone()], &targets[span], scale, &mut grad);
        Ok((ce, grad))
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.data.len()];
    for p in parts {
        let (ce, g) = p?;
        loss += ce;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok(BatchGrad { loss: loss * scale, grad })
}

/// Accumulates `scale * d(sum of cross-entropies)/d(params)` into `grad` and
/// returns the summed cross-entropy.
pub(crate) fn backward_trace(
    params: &ModelParams,
    trace: &ForwardTrace,
    tokens: &[u8],
    targets: &[u8],
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let c = &params.config;
    let lay = &params.layout;
    let w = &params.data;
    let (d, vocab) = (c.d_model, c.vocab);
    let rows = trace.rows();
    let len = trace.seq_len;

    let mut ce = 0.0;
    let mut dlogits = vec![0.0; rows * vocab];
    for r in 0..rows {
        let row = &trace.logits[r * vocab..(r + 1) * vocab];
        let lse = log_sum_exp(row);
        let t = targets[r] as usize;
        ce += lse - row[t];
        for j in 0..vocab {
            dlogits[r * vocab + j] = scale * math::exp(row[j] - lse);
        }
        dlogits[r * vocab + t] -= scale;
    }

    let h = trace.unembed_input();
    gemm(d, rows, vocab, h, Trans::Yes, &dlogits, Trans::No, &mut grad[lay.unembed..lay.unembed + d * vocab], 1.0);
    let mut dx = vec![0.0; rows * d];
    gemm(rows, vocab, d, &dlogits, Trans::No, &w[lay.unembed..], Trans::Yes, &mut dx, 0.0);
    if let (Some(off), Some(cache)) = (lay.final_ln, &trace.final_ln) {
        dx = norm_backward(&dx, cache, d, w, off, grad);
    }

    for (lo, lt) in lay.layers.iter().zip(&trace.layers).rev() {
        dx = block_backward(params, lo, lt, trace.batch, len, dx, grad);
    }

    for (r, &z) in tokens.iter().enumerate() {
        let t = r % len;
        let src = &dx[r * d..(r + 1) * d];
        let tok = lay.token_embed + z as usize * d;
        let pos = lay.pos_embed + t * d;
        for j in 0..d {
            grad[tok + j] += src[j];
            grad[pos + j] += src[j];
        }
    }
    ce
}

fn norm_backward(dy: &[f64], cache: &NormCache, d: usize, w: &[f64], off: NormOffsets, grad: &mut [f64]) -> Vec<f64> {
    let gamma = &w[off.gamma..off.gamma + d];
    let mut dx = vec![0.0; dy.len()];
    let mut dn = vec![0.0; d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let nh = &cache.nhat[r * d..(r + 1) * d];
        let (mut mean_dn, mut mean_dn_n) = (0.0, 0.0);
        for j in 0..d {
            grad[off.gamma + j] += dyr[j] * nh[j];
            grad[off.beta + j] += dyr[j];
            dn[j] = dyr[j] * gamma[j];
            mean_dn += dn[j];
            mean_dn_n += dn[j] * nh[j];
        }
        mean_dn /= d as f64;
        mean_dn_n /= d as f64;
        for j in 0..d {
            dx[r * d + j] = rs * (dn[j] - mean_dn - nh[j] * mean_dn_n);
        }
    }
    dx
}

fn add_column_sums(src: &[f64], width: usize, dst: &mut [f64]) {
    for row in src.chunks_exact(width) {
        dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
}

fn block_backward(
    params: &ModelParams,
    lo: &LayerOffsets,
    lt: &LayerTrace,
    batch: usize,
    len: usize,
    dx_post: Vec<f64>,
    grad: &mut [f64],
) -> Vec<f64> {
    let c = &params.config;
    let w = &params.data;
    let (d, dh, ff) = (c.d_model, c.head_dim(), c.d_ff);
    let rows = batch * len;
    let scale = 1.0 / math::sqrt(dh as f64);

    // MLP.
    let g = &lt.g;
    gemm(d, rows, ff, &dx_post, Trans::Yes, g, Trans::No, &mut grad[lo.w_out..lo.w_out + d * ff], 1.0);
    add_column_sums(&dx_post, d, &mut grad[lo.b_out..lo.b_out + d]);
    let mut du = vec![0.0; rows * ff];
    gemm(rows, d, ff, &dx_post, Trans::No, &w[lo.w_out..], Trans::No, &mut du, 0.0);
    du.iter_mut().zip(&lt.u).for_each(|(v, &u)| *v *= gelu_grad(u));
    let h2 = lt.mlp_input();
    gemm(ff, rows, d, &du, Trans::Yes, h2, Trans::No, &mut grad[lo.w_in..lo.w_in + ff * d], 1.0);
    add_column_sums(&du, ff, &mut grad[lo.b_in..lo.b_in + ff]);
    let mut dh2 = vec![0.0; rows * d];
    gemm(rows, ff, d, &du, Trans::No, &w[lo.w_in..], Trans::No, &mut dh2, 0.0);
    if let (Some(off), Some(cache)) = (lo.ln2, &lt.ln2) {
        dh2 = norm_backward(&dh2, cache, d, w, off, grad);
    }
    let mut dx_mid = dx_post;
    dx_mid.iter_mut().zip(&dh2).for_each(|(a, b)| *a += b);

    // Attention.
    let h = lt.attn_input();
    let mut dh_in = vec![0.0; rows * d];
    let mut da = vec![0.0; len];
    for (i, ho) in lo.heads.iter().enumerate() {
        let (q, k, v, attn, vo) = (&lt.q[i], &lt.k[i], &lt.v[i], &lt.attn[i], &lt.values[i]);
        let mut dvo = vec![0.0; rows * d];
        let mut dq = vec![0.0; rows * dh];
        let mut dk = vec![0.0; rows * dh];
        for b in 0..batch {
            for t in 0..len {
                let dy = &dx_mid[(b * len + t) * d..][..d];
                let a = &attn[b * len * len + t * len..][..=t];
                let mut dot = 0.0;
                for s in 0..=t {
                    let row = b * len + s;
                    let vr = &vo[row * d..][..d];
                    da[s] = dy.iter().zip(vr).map(|(x, y)| x * y).sum::<f64>();
                    dot += a[s] * da[s];
                    let dvr = &mut dvo[row * d..][..d];
                    for j in 0..d {
                        dvr[j] += a[s] * dy[j];
                    }
                }
                let qr = &q[(b * len + t) * dh..][..dh];
                for s in 0..=t {
                    let ds = scale * a[s] * (da[s] - dot);
                    if ds == 0.0 {
                        continue;
                    }
                    let row = b * len + s;
                    let kr = &k[row * dh..][..dh];
                    let dqr = &mut dq[(b * len + t) * dh..][..dh];
                    for j in 0..dh {
                        dqr[j] += ds * kr[j];
                    }
                    let dkr = &mut dk[row * dh..][..dh];
                    for j in 0..dh {
                        dkr[j] += ds * qr[j];
                    }
                }
            }
        }
        gemm(d, rows, dh, &dvo, Trans::Yes, v, Trans::No, &mut grad[ho.w_o..ho.w_o + d * dh], 1.0);
        let mut dv = vec![0.0; rows * dh];
        gemm(rows, d, dh, &dvo, Trans::No, &w[ho.w_o..], Trans::No, &mut dv, 0.0);
        for (dm, off) in [(&dq, ho.w_q), (&dk, ho.w_k), (&dv, ho.w_v)] {
            gemm(dh, rows, d, dm, Trans::Yes, h, Trans::No, &mut grad[off..off + dh * d], 1.0);
            gemm(rows, dh, d, dm, Trans::No, &w[off..], Trans::No, &mut dh_in, 1.0);
        }
    }
    if let (Some(off), Some(cache)) = (lo.ln1, &lt.ln1) {
        dh_in = norm_backward(&dh_in, cache, d, w, off, grad);
    }
    let mut dx_pre = dx_mid;
    dx_pre.iter_mut().zip(&dh_in).for_each(|(a, b)| *a += b);
    dx_pre
}
