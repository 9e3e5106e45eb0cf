use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::median;
use super::regression::AffineFit;
use crate::belief::{source_vector, ConstrainedVariant};
use crate::hmm::{HmmSpec, VOCAB};
use crate::linalg::{cosine, sub3, Vec3};
use crate::math;
use crate::nn::{forward_batch, ForwardTrace, ModelParams};
use crate::{Error, Result};

/// First 0-based position whose OV and embedding vectors enter the pass
/// statistics.
pub const FIRST_CHECKED_POSITION: usize = 2;

const DEGENERATE_NORM: f64 = 1e-9;

/// One forward pass per token over a constant sequence of full length: row
/// `(z, m)` holds the layer-0 embedding and OV vectors of token `z` at
/// position `m`.
fn constant_token_trace(params: &ModelParams) -> Result<ForwardTrace> {
    let len = params.config.max_ctx;
    let tokens: Vec<u8> = (0..VOCAB as u8).flat_map(|z| vec![z; len]).collect();
    forward_batch(params, &tokens, len)
}

fn map3(map: &AffineFit, x: &[f64]) -> Result<Vec3> {
    if map.in_dim != x.len() || map.out_dim != 3 {
        return Err(Error::Config(alloc::format!(
            "simplex map is {}→{}, activations have width {}",
            map.in_dim,
            map.out_dim,
            x.len()
        )));
    }
    let y = map.apply_linear(x);
    Ok([y[0], y[1], y[2]])
}

/// Images `f(buf[z, m]) - mean_z' f(buf[z', m])` for every token and position.
///
/// The token displacements sum to zero, so theory predicts images that do too;
/// centering removes only what all tokens at a position share.
fn centered_images(trace: &ForwardTrace, buf: &[f64], map: &AffineFit) -> Result<Vec<Vec<Vec3>>> {
    let len = trace.seq_len;
    let mut out = vec![Vec::with_capacity(len); VOCAB];
    for m in 0..len {
        let mut imgs = [[0.0; 3]; VOCAB];
        for (z, img) in imgs.iter_mut().enumerate() {
            *img = map3(map, trace.row(buf, z, m))?;
        }
        let mut mean = [0.0; 3];
        for img in &imgs {
            mean.iter_mut().zip(img).for_each(|(a, b)| *a += b / VOCAB as f64);
        }
        for (z, img) in imgs.iter().enumerate() {
            out[z].push(sub3(img, &mean));
        }
    }
    Ok(out)
}

fn angle_deg(a: &[f64], b: &[f64]) -> Option<f64> {
    cosine(a, b).map(|c| math::acos(c.clamp(-1.0, 1.0)).to_degrees())
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// OV vectors of one head pushed through the simplex map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvHeadReport {
    pub head: usize,
    /// `mapped[z][m]`, centered over tokens.
    pub mapped: Vec<Vec<Vec3>>,
    /// Sign that best aligns the head with the token displacements.
    pub orientation: f64,
    /// Median pairwise cosine between positions of the same token.
    pub within_token_cosine: Option<f64>,
    /// Median angle in degrees to `orientation * (pi T^{|z} - pi)`.
    pub angle_deg: Option<f64>,
    pub token_angle_deg: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvReport {
    pub first_position: usize,
    pub displacements: [Vec3; 3],
    pub heads: Vec<OvHeadReport>,
    /// Medians pooled over heads.
    pub within_token_cosine: Option<f64>,
    pub angle_deg: Option<f64>,
}

/// Maps `v = W_O W_V x^pre` of every (head, token, position) of layer 0
/// through the linear part of `map`, centers over tokens, and compares the
/// images with each other and with `pi T^{|z} - pi`.
pub fn ov_geometry_check(params: &ModelParams, spec: &HmmSpec, map: &AffineFit) -> Result<OvReport> {
    let trace = constant_token_trace(params)?;
    let layer = &trace.layers[0];
    let len = trace.seq_len;
    let mut displacements = [[0.0; 3]; 3];
    for (z, d) in displacements.iter_mut().enumerate() {
        *d = sub3(&source_vector(spec, z as u8, ConstrainedVariant::Rownorm)?, &spec.pi);
    }
    let mut heads = Vec::with_capacity(params.config.n_heads);
    let (mut all_cos, mut all_angle) = (Vec::new(), Vec::new());
    for h in 0..params.config.n_heads {
        let mapped = centered_images(&trace, &layer.values[h], map)?;
        let alignment: f64 = (0..VOCAB)
            .flat_map(|z| (FIRST_CHECKED_POSITION..len).map(move |m| (z, m)))
            .filter_map(|(z, m)| cosine(&mapped[z][m], &displacements[z]))
            .sum();
        let orientation = if alignment < 0.0 { -1.0 } else { 1.0 };
        let mut cos = Vec::new();
        let mut angles = Vec::new();
        let mut token_angle_deg = Vec::with_capacity(VOCAB);
        for z in 0..VOCAB {
            let target: Vec<f64> = displacements[z].iter().map(|v| orientation * v).collect();
            let mut token_angles = Vec::new();
            for m in FIRST_CHECKED_POSITION..len {
                for m2 in m + 1..len {
                    cos.extend(cosine(&mapped[z][m], &mapped[z][m2]));
                }
                token_angles.extend(angle_deg(&mapped[z][m], &target));
            }
            token_angle_deg.push(median(&token_angles));
            angles.extend(token_angles);
        }
        all_cos.extend_from_slice(&cos);
        all_angle.extend_from_slice(&angles);
        heads.push(OvHeadReport {
            head: h,
            mapped,
            orientation,
            within_token_cosine: median(&cos),
            angle_deg: median(&angles),
            token_angle_deg,
        });
    }
    Ok(OvReport {
        first_position: FIRST_CHECKED_POSITION,
        displacements,
        heads,
        within_token_cosine: median(&all_cos),
        angle_deg: median(&all_angle),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub first_position: usize,
    /// `mapped[z][m]`: image of the embedding, centered over tokens at the
    /// same position.
    pub mapped: Vec<Vec<Vec3>>,
    /// `cosines[z][m]` to the summed same-token OV image; `None` when either
    /// vector vanishes.
    pub cosines: Vec<Vec<Option<f64>>>,
    /// Median `|cos|` over positions from `first_position` on.
    pub parallelism: Option<f64>,
    /// Median signed cosine over the same positions.
    pub signed: Option<f64>,
    /// Median `|cos|` at each of the positions before `first_position`.
    pub early_parallelism: Vec<Option<f64>>,
    pub early_signed: Vec<Option<f64>>,
    /// Embedding images too small to have a direction.
    pub degenerate: usize,
}

/// Compares the mapped layer-0 embeddings with the same-token OV images,
/// both centered over tokens.
pub fn embedding_geometry_check(params: &ModelParams, map: &AffineFit) -> Result<EmbeddingReport> {
    let trace = constant_token_trace(params)?;
    let layer = &trace.layers[0];
    let len = trace.seq_len;
    let mapped = centered_images(&trace, &layer.x_pre, map)?;
    let mut ov = vec![vec![[0.0; 3]; len]; VOCAB];
    for values in &layer.values {
        let head = centered_images(&trace, values, map)?;
        for (acc, img) in ov.iter_mut().flatten().zip(head.iter().flatten()) {
            acc.iter_mut().zip(img).for_each(|(a, b)| *a += b);
        }
    }
    let scale = ov.iter().flatten().map(|v| norm(v)).fold(0.0, f64::max);
    let mut degenerate = 0;
    let mut cosines = vec![Vec::with_capacity(len); VOCAB];
    for z in 0..VOCAB {
        for m in 0..len {
            let c = if norm(&mapped[z][m]) <= DEGENERATE_NORM * scale.max(1.0) {
                degenerate += 1;
                None
            } else {
                cosine(&mapped[z][m], &ov[z][m])
            };
            cosines[z].push(c);
        }
    }
    let collect = |range: core::ops::Range<usize>, abs: bool| -> Option<f64> {
        let v: Vec<f64> = (0..VOCAB)
            .flat_map(|z| range.clone().map(move |m| (z, m)))
            .filter_map(|(z, m)| cosines[z][m])
            .map(|c| if abs { math::abs(c) } else { c })
            .collect();
        median(&v)
    };
    let first = FIRST_CHECKED_POSITION.min(len);
    Ok(EmbeddingReport {
        first_position: FIRST_CHECKED_POSITION,
        parallelism: collect(first..len, true),
        signed: collect(first..len, false),
        early_parallelism: (0..first).map(|m| collect(m..m + 1, true)).collect(),
        early_signed: (0..first).map(|m| collect(m..m + 1, false)).collect(),
        mapped,
        cosines,
        degenerate,
    })
}
