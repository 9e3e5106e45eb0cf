use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::activations::{ActivationSet, Stage};
use crate::belief::{GeometryCloud, GeometryVariant};
use crate::linalg::{cholesky, cholesky_solve, gemm, Matrix, Trans};
use crate::math;
use crate::{Error, Result};

/// How contexts are weighted in fits and averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Each context counts with its sequence probability.
    #[default]
    Probability,
    Uniform,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Probability => "probability",
            Weighting::Uniform => "uniform",
        }
    }
}

const RIDGE: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-10;

/// `y = W x + b`, fitted by weighted least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub offset: Vec<f64>,
    /// Weighted mean of `|y - f(x)|^2`.
    pub mse: f64,
    pub weighting: Weighting,
    /// Set when the design was rank deficient and the ridge term was added.
    pub ridge: bool,
    /// Input columns with no variance; their weights are zero.
    pub constant_columns: usize,
}

impl AffineFit {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.apply_linear(x);
        y.iter_mut().zip(&self.offset).for_each(|(a, b)| *a += b);
        y
    }

    /// The linear part `W x`.
    pub fn apply_linear(&self, x: &[f64]) -> Vec<f64> {
        self.weights.chunks_exact(self.in_dim).map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn mse_on(&self, x: &[f64], y: &[f64], weights: &[f64]) -> f64 {
        weighted_mse(self, x, y, weights)
    }
}

fn weighted_mse(fit: &AffineFit, x: &[f64], y: &[f64], weights: &[f64]) -> f64 {
    let wsum: f64 = weights.iter().sum();
    let mut total = 0.0;
    for ((xr, yr), &w) in x.chunks_exact(fit.in_dim).zip(y.chunks_exact(fit.out_dim)).zip(weights) {
        let pred = fit.apply(xr);
        total += w * pred.iter().zip(yr).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    total / wsum
}

/// Weighted affine least squares from `n × in_dim` rows `x` to `n × out_dim`
/// rows `y`.
///
/// The normal equations are solved on standardized columns. A ridge of
/// `1e-8` on that scale is added only when Cholesky detects rank deficiency.
pub fn fit_affine(
    x: &[f64],
    in_dim: usize,
    y: &[f64],
    out_dim: usize,
    weights: &[f64],
    weighting: Weighting,
) -> Result<AffineFit> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::Empty("regression needs at least one row"));
    }
    if x.len() != n * in_dim || y.len() != n * out_dim {
        return Err(Error::Config(format!("regression rows disagree: {} weights", n)));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("regression weights must be nonnegative".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Empty("regression weights sum to zero"));
    }
    let mean = |m: &[f64], dim: usize| {
        let mut mu = vec![0.0; dim];
        for (row, &w) in m.chunks_exact(dim).zip(weights) {
            mu.iter_mut().zip(row).for_each(|(a, b)| *a += w * b);
        }
        mu.iter_mut().for_each(|a| *a /= wsum);
        mu
    };
    let mx = mean(x, in_dim);
    let my = mean(y, out_dim);

    let mut sd = vec![0.0; in_dim];
    for (row, &w) in x.chunks_exact(in_dim).zip(weights) {
        for j in 0..in_dim {
            let c = row[j] - mx[j];
            sd[j] += w / wsum * c * c;
        }
    }
    sd.iter_mut().for_each(|s| *s = math::sqrt(*s));
    let scale = sd.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..in_dim).filter(|&j| sd[j] > 1e-12 * scale && sd[j] > 0.0).collect();
    let p = keep.len();

    let mut coef = vec![0.0; out_dim * in_dim];
    let mut ridge = false;
    if p > 0 {
        let mut z = vec![0.0; n * p];
        let mut t = vec![0.0; n * out_dim];
        for i in 0..n {
            let s = math::sqrt(weights[i] / wsum);
            for (c, &j) in keep.iter().enumerate() {
                z[i * p + c] = s * (x[i * in_dim + j] - mx[j]) / sd[j];
            }
            for k in 0..out_dim {
                t[i * out_dim + k] = s * (y[i * out_dim + k] - my[k]);
            }
        }
        let mut g = Matrix::zeros(p, p);
        gemm(p, n, p, &z, Trans::Yes, &z, Trans::No, g.as_mut_slice(), 0.0);
        let mut r = Matrix::zeros(p, out_dim);
        gemm(p, n, out_dim, &z, Trans::Yes, &t, Trans::No, r.as_mut_slice(), 0.0);
        let l = match cholesky(&g, PIVOT_TOL) {
            Some(l) => l,
            None => {
                ridge = true;
                for i in 0..p {
                    g[(i, i)] += RIDGE;
                }
                cholesky(&g, 0.0).ok_or(Error::NonConvergence { what: "ridge regression", residual: f64::NAN })?
            }
        };
        let beta = cholesky_solve(&l, &r);
        for (c, &j) in keep.iter().enumerate() {
            for k in 0..out_dim {
                coef[k * in_dim + j] = beta[(c, k)] / sd[j];
            }
        }
    }
    let offset: Vec<f64> = (0..out_dim)
        .map(|k| my[k] - (0..in_dim).map(|j| coef[k * in_dim + j] * mx[j]).sum::<f64>())
        .collect();
    let mut fit = AffineFit {
        in_dim,
        out_dim,
        weights: coef,
        offset,
        mse: 0.0,
        weighting,
        ridge,
        constant_columns: in_dim - p,
    };
    fit.mse = weighted_mse(&fit, x, y, weights);
    Ok(fit)
}

/// Affine regression of one activation stage onto a belief geometry, with
/// the same regression on a freshly initialized model as the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub stage: Stage,
    pub target: GeometryVariant,
    pub weighting: Weighting,
    pub fit: AffineFit,
    pub mse: f64,
    pub baseline_mse: f64,
    pub normalized_mse: f64,
    /// Ridge applied to either the model fit or the baseline fit.
    pub ridge: bool,
}

pub fn regress_to_geometry(
    acts: &ActivationSet,
    stage: Stage,
    target: &GeometryCloud,
    weighting: Weighting,
    baseline: &ActivationSet,
) -> Result<RegressionFit> {
    for set in [acts, baseline] {
        if set.max_len != target.max_len || set.len() != target.len() {
            return Err(Error::Config(format!(
                "activations cover {} contexts up to length {}, geometry {} up to {}",
                set.len(),
                set.max_len,
                target.len(),
                target.max_len
            )));
        }
    }
    let y = target.coords();
    let w = acts.weights(weighting);
    let fit = fit_affine(acts.rows(stage), acts.d_model, &y, 3, &w, weighting)?;
    let base = fit_affine(baseline.rows(stage), baseline.d_model, &y, 3, &w, weighting)?;
    let normalized_mse = if base.mse > 0.0 { fit.mse / base.mse } else if fit.mse == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(RegressionFit {
        stage,
        target: target.variant,
        weighting,
        mse: fit.mse,
        baseline_mse: base.mse,
        normalized_mse,
        ridge: fit.ridge || base.ridge,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn recovers_exact_affine_map() {
        let (n, d) = (60, 5);
        let x = random_rows(n, d, 1);
        let w_true = random_rows(3, d, 2);
        let b_true = [0.3, -1.0, 2.0];
        let y: Vec<f64> = x
            .chunks_exact(d)
            .flat_map(|r| {
                (0..3).map(|k| b_true[k] + (0..d).map(|j| w_true[k * d + j] * r[j]).sum::<f64>()).collect::<Vec<_>>()
            })
            .collect();
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 4) as f64).collect();
        let fit = fit_affine(&x, d, &y, 3, &weights, Weighting::Probability).unwrap();
        assert!(!fit.ridge);
        assert!(fit.mse <= 1e-20, "{}", fit.mse);
        for (a, b) in fit.weights.iter().zip(&w_true) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_column_triggers_ridge() {
        let (n, d) = (40, 4);
        let mut x = random_rows(n, d, 3);
        for r in x.chunks_exact_mut(d) {
            r[3] = -2.0 * r[1];
        }
        let y: Vec<f64> = x.chunks_exact(d).flat_map(|r| [r[0], r[1] + 1.0, 0.5]).collect();
        let fit = fit_affine(&x, d, &y, 3, &vec![1.0; n], Weighting::Uniform).unwrap();
        assert!(fit.ridge);
        assert!(fit.mse < 1e-12);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let (n, d) = (30, 3);
        let mut x = random_rows(n, d, 4);
        for r in x.chunks_exact_mut(d) {
            r[2] = 7.0;
        }
        let y: Vec<f64> = x.chunks_exact(d).flat_map(|r| [r[0], r[1], 1.0]).collect();
        let fit = fit_affine(&x, d, &y, 3, &vec![1.0; n], Weighting::Uniform).unwrap();
        assert_eq!(fit.constant_columns, 1);
        assert!(!fit.ridge);
        assert_eq!(fit.weights[2], 0.0);
        assert!(fit.mse < 1e-24);
    }

    #[test]
    fn zero_weight_rows_do_not_matter() {
        let (n, d) = (20, 2);
        let x = random_rows(n, d, 5);
        let mut y: Vec<f64> = x.chunks_exact(d).flat_map(|r| [r[0] + r[1], 0.0, 1.0]).collect();
        let mut w = vec![1.0; n];
        w[0] = 0.0;
        y[0] = 100.0;
        let fit = fit_affine(&x, d, &y, 3, &w, Weighting::Probability).unwrap();
        assert!(fit.mse < 1e-24);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(fit_affine(&[], 2, &[], 3, &[], Weighting::Uniform), Err(Error::Empty(_))));
        assert!(fit_affine(&[1.0], 2, &[0.0; 3], 3, &[1.0], Weighting::Uniform).is_err());
        assert!(fit_affine(&[1.0, 2.0], 2, &[0.0; 3], 3, &[-1.0], Weighting::Uniform).is_err());
    }
}
