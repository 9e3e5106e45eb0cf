//! Exact Bayesian belief states, attention-constrained belief states and the
//! point clouds they induce over all contexts.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hmm::{self, HmmSpec, TokenSeq};
use crate::linalg::{self, Mat3, Vec3};
use crate::math;
use crate::spectral;
use crate::{Error, Result};

/// Which belief computation produced a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefRole {
    FullBelief,
    ConstrainedBelief,
}

/// A length-3 vector in the simplex hyperplane (coordinates sum to one).
///
/// Full beliefs lie inside the simplex; constrained beliefs may have negative
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    pub coords: Vec3,
    pub role: BeliefRole,
}

impl SimplexPoint {
    pub fn full(coords: Vec3) -> Self {
        Self { coords, role: BeliefRole::FullBelief }
    }

    pub fn constrained(coords: Vec3) -> Self {
        Self { coords, role: BeliefRole::ConstrainedBelief }
    }
}

/// The two closed forms of the constrained update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstrainedVariant {
    /// Each source contributes its own single-token Bayes posterior,
    /// `pi T^(z) T^n / (pi T^(z) 1) - pi`.
    Bayes,
    /// Each source contributes `pi T^{|z} T^n - pi` with row-normalized `T^{|z}`.
    Rownorm,
}

/// Which geometry a cloud holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryVariant {
    Full,
    ConstrainedBayes,
    ConstrainedRownorm,
    /// The rownorm geometry computed through spectral projectors.
    ConstrainedSpectral,
}

impl GeometryVariant {
    pub fn name(&self) -> &'static str {
        match self {
            GeometryVariant::Full => "full",
            GeometryVariant::ConstrainedBayes => "constrained_bayes",
            GeometryVariant::ConstrainedRownorm => "constrained_rownorm",
            GeometryVariant::ConstrainedSpectral => "constrained_spectral",
        }
    }
}

/// One context of a [`GeometryCloud`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudEntry {
    pub seq: TokenSeq,
    pub point: SimplexPoint,
    /// Full-belief coordinates clipped to `[0, 1]`, whatever the variant.
    pub rgb: Vec3,
    pub prob: f64,
}

/// A belief point for every context up to `max_len`, in shortlex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryCloud {
    pub entries: Vec<CloudEntry>,
    pub max_len: usize,
    pub variant: GeometryVariant,
}

impl GeometryCloud {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row-major `n × 3` matrix of point coordinates.
    pub fn coords(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.point.coords).collect()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.prob).collect()
    }
}

/// One step of Bayesian filtering: `eta T^(z) / (eta T^(z) 1)`.
pub fn update_belief(spec: &HmmSpec, eta: &SimplexPoint, z: u8) -> Result<SimplexPoint> {
    let v = linalg::vec_mat(&eta.coords, spec.labeled(z)?);
    let norm = linalg::sum3(&v);
    if !(norm > 0.0) {
        return Err(Error::ImpossibleObservation { token: z });
    }
    Ok(SimplexPoint::full(linalg::scale3(&v, 1.0 / norm)))
}

/// Posterior over hidden states after `seq`, starting from `pi`, in product
/// form `pi T^(z_1..z_d) / (pi T^(z_1..z_d) 1)`.
pub fn full_belief(spec: &HmmSpec, seq: &[u8]) -> Result<SimplexPoint> {
    let v = hmm::forward_vector(spec, seq)?;
    let norm = linalg::sum3(&v);
    if !(norm > 0.0) {
        let z = seq.last().copied().unwrap_or(0);
        return Err(Error::ImpossibleObservation { token: z });
    }
    Ok(SimplexPoint::full(linalg::scale3(&v, 1.0 / norm)))
}

/// Posterior after `seq` computed by folding [`update_belief`].
pub fn full_belief_recursive(spec: &HmmSpec, seq: &[u8]) -> Result<SimplexPoint> {
    seq.iter().try_fold(SimplexPoint::full(spec.pi), |eta, &z| update_belief(spec, &eta, z))
}

/// Displacement `w T^n - pi` for every lag `n < max_lag`, given the
/// lag-zero source vector `w`.
fn lagged_displacements(spec: &HmmSpec, source: Vec3, max_lag: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(max_lag);
    let mut w = source;
    for _ in 0..max_lag {
        out.push(linalg::sub3(&w, &spec.pi));
        w = linalg::vec_mat(&w, &spec.marginal);
    }
    out
}

/// The lag-zero vector a single source token contributes under `variant`.
pub fn source_vector(spec: &HmmSpec, z: u8, variant: ConstrainedVariant) -> Result<Vec3> {
    match variant {
        ConstrainedVariant::Rownorm => Ok(linalg::vec_mat(&spec.pi, &hmm::conditional_matrix(spec, z)?)),
        ConstrainedVariant::Bayes => Ok(full_belief(spec, &[z])?.coords),
    }
}

/// Per-token, per-lag correction terms of the constrained update.
struct CorrectionTable {
    pi: Vec3,
    terms: [Vec<Vec3>; 3],
}

impl CorrectionTable {
    fn new(spec: &HmmSpec, variant: ConstrainedVariant, max_lag: usize) -> Result<Self> {
        let mut terms: [Vec<Vec3>; 3] = Default::default();
        for z in 0..3u8 {
            terms[z as usize] = lagged_displacements(spec, source_vector(spec, z, variant)?, max_lag);
        }
        Ok(Self { pi: spec.pi, terms })
    }

    fn eval(&self, seq: &[u8]) -> Vec3 {
        let d = seq.len();
        seq.iter().enumerate().fold(self.pi, |acc, (s, &z)| linalg::add3(&acc, &self.terms[z as usize][d - 1 - s]))
    }
}

/// Parallel, attention-shaped belief: the stationary prior plus one
/// independent correction per source token, each propagated by `T^{d-s}`.
pub fn constrained_belief(spec: &HmmSpec, seq: &[u8], variant: ConstrainedVariant) -> Result<SimplexPoint> {
    if seq.is_empty() {
        return Err(Error::Empty("constrained belief needs at least one token"));
    }
    hmm::check_tokens(seq)?;
    let d = seq.len();
    let mut acc = spec.pi;
    for (s, &z) in seq.iter().enumerate() {
        let mut w = source_vector(spec, z, variant)?;
        for _ in 0..(d - 1 - s) {
            w = linalg::vec_mat(&w, &spec.marginal);
        }
        acc = linalg::add3(&acc, &linalg::sub3(&w, &spec.pi));
    }
    Ok(SimplexPoint::constrained(acc))
}

/// Barycentric plotting coordinates: states 0, 1, 2 map to `(0, 0)`, `(1, 0)`
/// and `(1/2, sqrt(3)/2)`.
pub fn simplex_coords(p: &Vec3) -> (f64, f64) {
    let h = math::sqrt(3.0) / 2.0;
    (p[1] + 0.5 * p[2], h * p[2])
}

fn clip01(v: &Vec3) -> Vec3 {
    [v[0].clamp(0.0, 1.0), v[1].clamp(0.0, 1.0), v[2].clamp(0.0, 1.0)]
}

/// Belief points for every context of length `1..=max_len`.
pub fn build_geometry_cloud(spec: &HmmSpec, max_len: usize, variant: GeometryVariant) -> Result<GeometryCloud> {
    let forward = hmm::enumerate_forward(spec, max_len)?;
    let table = match variant {
        GeometryVariant::Full => None,
        GeometryVariant::ConstrainedBayes => Some(CorrectionTable::new(spec, ConstrainedVariant::Bayes, max_len)?),
        GeometryVariant::ConstrainedRownorm => Some(CorrectionTable::new(spec, ConstrainedVariant::Rownorm, max_len)?),
        GeometryVariant::ConstrainedSpectral => None,
    };
    let spectral_terms = if variant == GeometryVariant::ConstrainedSpectral {
        Some(spectral::SpectralCorrections::new(spec, &spectral::decompose(spec)?, max_len)?)
    } else {
        None
    };
    let mut entries = Vec::with_capacity(forward.len());
    for (seq, v) in forward {
        let prob = linalg::sum3(&v);
        if !(prob > 0.0) {
            return Err(Error::ImpossibleObservation { token: *seq.last().unwrap_or(&0) });
        }
        let full = linalg::scale3(&v, 1.0 / prob);
        let point = match (&table, &spectral_terms) {
            (Some(t), _) => SimplexPoint::constrained(t.eval(&seq)),
            (None, Some(s)) => SimplexPoint::constrained(s.eval(&seq)),
            (None, None) => SimplexPoint::full(full),
        };
        entries.push(CloudEntry { seq, point, rgb: clip01(&full), prob });
    }
    Ok(GeometryCloud { entries, max_len, variant })
}

/// `pi T^(z) T^n` normalized, for tests and diagnostics: the single-token
/// posterior propagated `n` steps.
pub fn propagated_posterior(spec: &HmmSpec, z: u8, n: u32) -> Result<Vec3> {
    let post = full_belief(spec, &[z])?.coords;
    let tn: Mat3 = linalg::mat_pow(&spec.marginal, n);
    Ok(linalg::vec_mat(&post, &tn))
}
