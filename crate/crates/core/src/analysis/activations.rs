use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::regression::Weighting;
use crate::exec::Executor;
use crate::hmm::{self, HmmSpec};
use crate::linalg::{gemm, symmetric_eigen, Matrix, Trans};
use crate::math;
use crate::nn::ModelParams;
use crate::train::map_contexts;
use crate::{Error, Result};

/// Residual-stream snapshot inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Mid,
    Post,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pre, Stage::Mid, Stage::Post];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Mid => "mid",
            Stage::Post => "post",
        }
    }
}

/// Final-position activations of every context of length `1..=max_len`, in
/// shortlex order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub max_len: usize,
    pub d_model: usize,
    pub layer: usize,
    pub probs: Vec<f64>,
    pub pre: Vec<f64>,
    pub mid: Vec<f64>,
    pub post: Vec<f64>,
}

impl ActivationSet {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn rows(&self, stage: Stage) -> &[f64] {
        match stage {
            Stage::Pre => &self.pre,
            Stage::Mid => &self.mid,
            Stage::Post => &self.post,
        }
    }

    pub fn row(&self, stage: Stage, i: usize) -> &[f64] {
        &self.rows(stage)[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn weights(&self, weighting: Weighting) -> Vec<f64> {
        match weighting {
            Weighting::Probability => self.probs.clone(),
            Weighting::Uniform => vec![1.0; self.len()],
        }
    }
}

pub fn collect_activations<E: Executor>(
    params: &ModelParams,
    spec: &HmmSpec,
    max_len: usize,
    layer: usize,
    exec: &E,
) -> Result<ActivationSet> {
    if layer >= params.config.n_layers {
        return Err(Error::Config(alloc::format!("layer {layer} does not exist")));
    }
    let d = params.config.d_model;
    let rows = map_contexts(params, max_len, exec, |trace, b, t, _| {
        let lt = &trace.layers[layer];
        let mut out = Vec::with_capacity(3 * d);
        out.extend_from_slice(trace.row(&lt.x_pre, b, t));
        out.extend_from_slice(trace.row(&lt.x_mid, b, t));
        out.extend_from_slice(trace.row(&lt.x_post, b, t));
        out
    })?;
    let n = rows.len();
    let (mut pre, mut mid, mut post) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d), Vec::with_capacity(n * d));
    for r in &rows {
        pre.extend_from_slice(&r[..d]);
        mid.extend_from_slice(&r[d..2 * d]);
        post.extend_from_slice(&r[2 * d..]);
    }
    let probs = hmm::enumerate_contexts(spec, max_len)?.into_iter().map(|(_, p)| p).collect();
    Ok(ActivationSet { max_len, d_model: d, layer, probs, pre, mid, post })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub dim: usize,
    pub weighting: Weighting,
    pub mean: Vec<f64>,
    /// `k × dim`, orthonormal rows; the largest-magnitude entry of each row is
    /// positive.
    pub components: Vec<f64>,
    pub variances: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
    pub total_variance: f64,
    /// `n × k` coordinates of the centered rows.
    pub projected: Vec<f64>,
    /// Set when every row is identical.
    pub degenerate: bool,
}

pub fn pca(acts: &ActivationSet, stage: Stage, k: usize, weighting: Weighting) -> Result<PcaResult> {
    pca_rows(acts.rows(stage), acts.d_model, &acts.weights(weighting), k, weighting)
}

/// Weighted PCA of `n × dim` rows from the covariance eigenproblem.
pub fn pca_rows(data: &[f64], dim: usize, weights: &[f64], k: usize, weighting: Weighting) -> Result<PcaResult> {
    let n = weights.len();
    if n < 2 || data.len() != n * dim {
        return Err(Error::Config(alloc::format!("PCA needs at least 2 rows of width {dim}")));
    }
    if k == 0 || k > dim {
        return Err(Error::Config(alloc::format!("k = {k} must be in 1..={dim}")));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Empty("PCA weights sum to zero"));
    }
    let mut mean = vec![0.0; dim];
    for (row, &w) in data.chunks_exact(dim).zip(weights) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += w * x);
    }
    mean.iter_mut().for_each(|m| *m /= wsum);
    let mut centered = vec![0.0; n * dim];
    for (i, (row, &w)) in data.chunks_exact(dim).zip(weights).enumerate() {
        let s = math::sqrt(w / wsum);
        for j in 0..dim {
            centered[i * dim + j] = s * (row[j] - mean[j]);
        }
    }
    let mut cov = Matrix::zeros(dim, dim);
    gemm(dim, n, dim, &centered, Trans::Yes, &centered, Trans::No, cov.as_mut_slice(), 0.0);
    let (values, vectors) = symmetric_eigen(&cov);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let degenerate = !(total > 0.0);

    let mut components = vec![0.0; k * dim];
    for c in 0..k {
        let col: Vec<f64> = (0..dim).map(|j| vectors[(j, c)]).collect();
        let big = col.iter().copied().fold(0.0f64, |acc, v| if math::abs(v) > math::abs(acc) { v } else { acc });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[c * dim + j] = sign * col[j];
        }
    }
    let variances: Vec<f64> = values[..k].iter().map(|v| v.max(0.0)).collect();
    let explained_ratio: Vec<f64> =
        variances.iter().map(|v| if degenerate { 0.0 } else { v / total }).collect();
    let mut acc = 0.0;
    let cumulative_ratio = explained_ratio
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect();

    let mut projected = vec![0.0; n * k];
    for (i, row) in data.chunks_exact(dim).enumerate() {
        for c in 0..k {
            let comp = &components[c * dim..(c + 1) * dim];
            projected[i * k + c] = (0..dim).map(|j| (row[j] - mean[j]) * comp[j]).sum();
        }
    }
    Ok(PcaResult {
        dim,
        weighting,
        mean,
        components,
        variances,
        explained_ratio,
        cumulative_ratio,
        total_variance: total,
        projected,
        degenerate,
    })
}
