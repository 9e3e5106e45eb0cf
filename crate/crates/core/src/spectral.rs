//! Spectral projectors of the hidden-state transition matrix and the
//! attention, OV and embedding predictions derived from them.
//!
//! Positions in predictions are 0-based: row `d` of a pattern is the
//! destination at position `d + 1` of the context.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::belief::SimplexPoint;
use crate::hmm::{self, HmmSpec};
use crate::linalg::{self, Mat3, Vec3, ONES3};
use crate::math;
use crate::{Error, Result};

/// Roots closer than this are merged into one eigenvalue.
const CLUSTER_TOL: f64 = 1e-6;
const PROJECTOR_TOL: f64 = 1e-9;

/// An eigenvalue of the marginal transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

impl Eigenvalue {
    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }
}

/// Frobenius covariant `T_lambda` for a real eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub lambda: f64,
    pub matrix: Mat3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<Eigenvalue>,
    /// Empty when some eigenvalue is complex.
    pub projectors: Vec<Projector>,
    /// `I - 1 pi`.
    pub simplex_projector: Mat3,
}

impl SpectralDecomp {
    pub fn has_complex(&self) -> bool {
        self.eigenvalues.iter().any(|e| !e.is_real())
    }

    pub fn projector(&self, lambda: f64) -> Option<&Mat3> {
        self.projectors.iter().find(|p| math::abs(p.lambda - lambda) <= CLUSTER_TOL).map(|p| &p.matrix)
    }

    /// The single eigenvalue other than 1, as needed by the attention
    /// predictions.
    pub fn zeta(&self) -> Result<f64> {
        if self.has_complex() {
            return Err(Error::Regime("complex eigenvalues are outside the predicted regime".into()));
        }
        let others: Vec<&Projector> = self.projectors.iter().filter(|p| p.lambda != 1.0).collect();
        match others.as_slice() {
            [p] => Ok(p.lambda),
            [] => Err(Error::Regime("transition matrix has no eigenvalue other than 1".into())),
            _ => Err(Error::Regime(format!("predictions need a single non-unit eigenvalue, found {}", others.len()))),
        }
    }

    /// Largest deviation from completeness, idempotence / annihilation and
    /// reconstruction of `marginal`.
    pub fn residual(&self, marginal: &Mat3) -> f64 {
        let mut sum = linalg::zeros3();
        let mut recon = linalg::zeros3();
        let mut worst: f64 = 0.0;
        for (i, p) in self.projectors.iter().enumerate() {
            sum = linalg::mat_add(&sum, &p.matrix);
            recon = linalg::mat_add(&recon, &linalg::mat_scale(&p.matrix, p.lambda));
            for (j, q) in self.projectors.iter().enumerate() {
                let prod = linalg::mat_mul(&p.matrix, &q.matrix);
                let want = if i == j { p.matrix } else { linalg::zeros3() };
                worst = worst.max(linalg::max_abs_diff3(&prod, &want));
            }
        }
        worst = worst.max(linalg::max_abs_diff3(&sum, &linalg::identity3()));
        worst.max(linalg::max_abs_diff3(&recon, marginal))
    }
}

fn cluster_roots(roots: &[f64]) -> Vec<Eigenvalue> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &r in roots {
        match out.iter_mut().find(|(v, _)| math::abs(*v - r) <= CLUSTER_TOL) {
            // The unit root is exact; keep it when merging.
            Some((v, m)) => {
                if *v != 1.0 {
                    *v = if r == 1.0 { 1.0 } else { (*v * *m as f64 + r) / (*m as f64 + 1.0) };
                }
                *m += 1;
            }
            None => out.push((r, 1)),
        }
    }
    out.into_iter().map(|(re, multiplicity)| Eigenvalue { re, im: 0.0, multiplicity }).collect()
}

/// Spectral decomposition of `spec.marginal` from its characteristic
/// polynomial, with projectors built by Lagrange interpolation.
pub fn decompose(spec: &HmmSpec) -> Result<SpectralDecomp> {
    let t = &spec.marginal;
    let tr = linalg::trace3(t);
    let minors = t[0][0] * t[1][1] - t[0][1] * t[1][0] + t[0][0] * t[2][2] - t[0][2] * t[2][0] + t[1][1] * t[2][2]
        - t[1][2] * t[2][1];
    // Row-stochastic, so 1 is a root: divide it out to get
    // lambda^2 + b lambda + c.
    let b = 1.0 - tr;
    let c = minors + b;
    let disc = b * b - 4.0 * c;
    let simplex_projector = linalg::mat_sub(&linalg::identity3(), &linalg::outer(&ONES3, &spec.pi));

    if disc < -1e-12 {
        let re = -b / 2.0;
        let im = math::sqrt(-disc) / 2.0;
        return Ok(SpectralDecomp {
            eigenvalues: vec![
                Eigenvalue { re: 1.0, im: 0.0, multiplicity: 1 },
                Eigenvalue { re, im, multiplicity: 1 },
                Eigenvalue { re, im: -im, multiplicity: 1 },
            ],
            projectors: Vec::new(),
            simplex_projector,
        });
    }
    let r = math::sqrt(disc.max(0.0));
    let mut eigenvalues = cluster_roots(&[1.0, (-b + r) / 2.0, (-b - r) / 2.0]);
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re));

    let id = linalg::identity3();
    let projectors: Vec<Projector> = eigenvalues
        .iter()
        .map(|ei| {
            let matrix = eigenvalues.iter().filter(|ej| ej.re != ei.re).fold(id, |acc, ej| {
                let factor = linalg::mat_scale(&linalg::mat_sub(t, &linalg::mat_scale(&id, ej.re)), 1.0 / (ei.re - ej.re));
                linalg::mat_mul(&acc, &factor)
            });
            Projector { lambda: ei.re, matrix }
        })
        .collect();
    let decomp = SpectralDecomp { eigenvalues, projectors, simplex_projector };
    let residual = decomp.residual(t);
    if !(residual <= PROJECTOR_TOL) {
        return Err(Error::Spectral { reason: "transition matrix is not diagonalizable", residual });
    }
    Ok(decomp)
}

/// Per-token, per-lag corrections `sum_{lambda != 1} lambda^n pi T^{|z} T_lambda`.
pub(crate) struct SpectralCorrections {
    pi: Vec3,
    terms: [Vec<Vec3>; 3],
}

impl SpectralCorrections {
    pub(crate) fn new(spec: &HmmSpec, decomp: &SpectralDecomp, max_lag: usize) -> Result<Self> {
        if decomp.has_complex() {
            return Err(Error::Regime("complex eigenvalues are outside the predicted regime".into()));
        }
        let mut terms: [Vec<Vec3>; 3] = Default::default();
        for z in 0..3u8 {
            let w = linalg::vec_mat(&spec.pi, &hmm::conditional_matrix(spec, z)?);
            let parts: Vec<(f64, Vec3)> = decomp
                .projectors
                .iter()
                .filter(|p| p.lambda != 1.0)
                .map(|p| (p.lambda, linalg::vec_mat(&w, &p.matrix)))
                .collect();
            terms[z as usize] = (0..max_lag)
                .map(|n| {
                    parts.iter().fold([0.0; 3], |acc, (lambda, v)| {
                        linalg::add3(&acc, &linalg::scale3(v, math::powi(*lambda, n as u32)))
                    })
                })
                .collect();
        }
        Ok(Self { pi: spec.pi, terms })
    }

    pub(crate) fn eval(&self, seq: &[u8]) -> Vec3 {
        let d = seq.len();
        seq.iter().enumerate().fold(self.pi, |acc, (s, &z)| linalg::add3(&acc, &self.terms[z as usize][d - 1 - s]))
    }
}

/// The rownorm constrained belief written through spectral projectors:
/// `pi + sum_s sum_{lambda != 1} lambda^{d-s} pi T^{|z_s} T_lambda`.
pub fn spectral_constrained_belief(spec: &HmmSpec, decomp: &SpectralDecomp, seq: &[u8]) -> Result<SimplexPoint> {
    if seq.is_empty() {
        return Err(Error::Empty("constrained belief needs at least one token"));
    }
    hmm::check_tokens(seq)?;
    Ok(SimplexPoint::constrained(SpectralCorrections::new(spec, decomp, seq.len())?.eval(seq)))
}

/// True when `1 - 3x < 0`, so the signed lag profile needs two heads.
pub fn requires_two_heads(x: f64) -> bool {
    1.0 - 3.0 * x < 0.0
}

/// Lag support and decay of one predicted head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadShape {
    /// Lags `offset, offset + step, ...` receive attention.
    pub offset: usize,
    pub step: usize,
    /// Ratio between consecutive supported lags.
    pub ratio: f64,
}

impl HeadShape {
    /// Closed-form weight of destination `d` on source `s` (0-based).
    ///
    /// Supported lags below the earliest one get `(1 - ratio) ratio^k`; the
    /// earliest supported source takes the remaining `ratio^K`, so rows sum to
    /// one and every column decays by exactly `ratio` per `step` destinations.
    /// A destination with no supported lag attends to itself.
    pub fn weight(&self, d: usize, s: usize) -> f64 {
        if s > d {
            return 0.0;
        }
        if d < self.offset {
            return if s == d { 1.0 } else { 0.0 };
        }
        let n = d - s;
        if n < self.offset || (n - self.offset) % self.step != 0 {
            return 0.0;
        }
        let k = ((n - self.offset) / self.step) as u32;
        let k_max = ((d - self.offset) / self.step) as u32;
        if k == k_max {
            math::powi(self.ratio, k)
        } else {
            (1.0 - self.ratio) * math::powi(self.ratio, k)
        }
    }

    /// First lag of at least one that this head covers.
    pub fn first_positive_lag(&self) -> usize {
        if self.offset >= 1 {
            self.offset
        } else {
            self.step
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPrediction {
    pub zeta: f64,
    pub max_len: usize,
    pub head_count: usize,
    pub heads: Vec<HeadShape>,
    /// `patterns[h][d][s]` for `s <= d < max_len`.
    pub patterns: Vec<Vec<Vec<f64>>>,
    /// `anchor_rows[h][s] = A^(h)_{s + lag, s}` at the head's first positive lag.
    pub anchor_rows: Vec<Vec<f64>>,
    /// `zeta^n` for `n < max_len`: the signed lag profile the heads combine to.
    pub signed_profile: Vec<f64>,
}

impl AttentionPrediction {
    fn from_heads(zeta: f64, max_len: usize, heads: Vec<HeadShape>) -> Self {
        let patterns = heads
            .iter()
            .map(|h| (0..max_len).map(|d| (0..=d).map(|s| h.weight(d, s)).collect()).collect())
            .collect();
        let anchor_rows = heads
            .iter()
            .map(|h| {
                let lag = h.first_positive_lag();
                (0..max_len).map(|s| h.weight(s + lag, s)).collect()
            })
            .collect();
        let signed_profile = (0..max_len).map(|n| math::powi(zeta, n as u32)).collect();
        Self { zeta, max_len, head_count: heads.len(), heads, patterns, anchor_rows, signed_profile }
    }

    pub fn weight(&self, head: usize, d: usize, s: usize) -> f64 {
        self.heads[head].weight(d, s)
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Single-head pattern with `A_{d+m,s} = zeta^m A_{d,s}` and unit row sums:
/// `A_{d,s} = (1 - zeta) zeta^{d-s}` for sources after the first, and the
/// first source keeps `zeta^{d-1}`.
pub fn predict_attention(spec: &HmmSpec, max_len: usize) -> Result<AttentionPrediction> {
    check_max_len(max_len)?;
    let zeta = decompose(spec)?.zeta()?;
    if zeta < 0.0 {
        return Err(Error::Regime(format!("zeta = {zeta} is negative; use the two-head prediction")));
    }
    Ok(AttentionPrediction::from_heads(zeta, max_len, vec![HeadShape { offset: 0, step: 1, ratio: zeta }]))
}

/// Two-head split for negative `zeta`: head 0 covers even lags, head 1 odd
/// lags, each decaying by `zeta^2` every two steps.
pub fn predict_two_heads(spec: &HmmSpec, max_len: usize) -> Result<AttentionPrediction> {
    check_max_len(max_len)?;
    let zeta = decompose(spec)?.zeta()?;
    if zeta >= 0.0 {
        return Err(Error::Regime(format!("zeta = {zeta} is not negative; a single head suffices")));
    }
    let q = zeta * zeta;
    Ok(AttentionPrediction::from_heads(
        zeta,
        max_len,
        vec![HeadShape { offset: 0, step: 2, ratio: q }, HeadShape { offset: 1, step: 2, ratio: q }],
    ))
}

/// Chooses [`predict_attention`] or [`predict_two_heads`] from the sign of `zeta`.
pub fn predict_auto(spec: &HmmSpec, max_len: usize) -> Result<AttentionPrediction> {
    if decompose(spec)?.zeta()? < 0.0 {
        predict_two_heads(spec, max_len)
    } else {
        predict_attention(spec, max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvEmbedPrediction {
    /// `pi T^{|z} - pi` per token.
    pub displacements: [Vec3; 3],
    /// `ov_scale[h][m]`: `f(v^(h)_m) = ov_scale[h][m] * displacements[z]`.
    pub ov_scale: Vec<Vec<f64>>,
    /// `f(x^pre_m) = embed_scale[m] * displacements[z]`.
    pub embed_scale: Vec<f64>,
}

impl OvEmbedPrediction {
    pub fn ov(&self, head: usize, m: usize, z: u8) -> Vec3 {
        linalg::scale3(&self.displacements[z as usize], self.ov_scale[head][m])
    }

    pub fn embedding(&self, m: usize, z: u8) -> Vec3 {
        linalg::scale3(&self.displacements[z as usize], self.embed_scale[m])
    }
}

/// Simplex-plane images of OV vectors and pre-attention embeddings implied by
/// an attention pattern.
///
/// Source `m` reaches destination `m + n` at the head's first positive lag `n`
/// with weight `A_{m+n,m}` and must contribute `zeta^n` times the token
/// displacement, which fixes `f(v_m)`. The embedding supplies whatever the
/// diagonal attention leaves of the lag-zero displacement.
pub fn predict_ov_and_embeddings(spec: &HmmSpec, anchors: &AttentionPrediction) -> Result<OvEmbedPrediction> {
    let mut displacements = [[0.0; 3]; 3];
    for (z, d) in displacements.iter_mut().enumerate() {
        *d = linalg::sub3(&linalg::vec_mat(&spec.pi, &hmm::conditional_matrix(spec, z as u8)?), &spec.pi);
    }
    let mut ov_scale = Vec::with_capacity(anchors.head_count);
    for (h, shape) in anchors.heads.iter().enumerate() {
        let lag = shape.first_positive_lag();
        let mut scales = Vec::with_capacity(anchors.max_len);
        for m in 0..anchors.max_len {
            let a = anchors.weight(h, m + lag, m);
            if a == 0.0 {
                return Err(Error::Regime(format!("A[{}][{}] of head {h} is zero; OV scale is undefined", m + lag, m)));
            }
            scales.push(math::powi(anchors.zeta, lag as u32) / a);
        }
        ov_scale.push(scales);
    }
    let embed_scale = (0..anchors.max_len)
        .map(|m| 1.0 - (0..anchors.head_count).map(|h| anchors.weight(h, m, m) * ov_scale[h][m]).sum::<f64>())
        .collect();
    Ok(OvEmbedPrediction { displacements, ov_scale, embed_scale })
}
