use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::regression::Weighting;
use crate::exec::Executor;
use crate::hmm::{self, HmmSpec};
use crate::math;
use crate::nn::ModelParams;
use crate::train::map_contexts;
use crate::{Error, Result};

/// Attention of one head averaged over contexts: row `d` averages the final
/// row of every context of length `d + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPattern {
    pub layer: usize,
    pub head: usize,
    pub weighting: Weighting,
    /// `rows[d][s]` for `s <= d`.
    pub rows: Vec<Vec<f64>>,
}

impl MeanPattern {
    pub fn max_len(&self) -> usize {
        self.rows.len()
    }

    /// Builds a pattern from explicit rows, e.g. a theoretical prediction.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (d, r) in rows.iter().enumerate() {
            if r.len() != d + 1 {
                return Err(Error::Config(format!("row {d} has {} entries, expected {}", r.len(), d + 1)));
            }
        }
        Ok(Self { layer: 0, head: 0, weighting: Weighting::Uniform, rows })
    }
}

pub fn mean_attention<E: Executor>(
    params: &ModelParams,
    spec: &HmmSpec,
    max_len: usize,
    layer: usize,
    head: usize,
    weighting: Weighting,
    exec: &E,
) -> Result<MeanPattern> {
    if layer >= params.config.n_layers || head >= params.config.n_heads {
        return Err(Error::Config(format!("layer {layer} head {head} does not exist")));
    }
    let rows = map_contexts(params, max_len, exec, |trace, b, t, _| {
        (0..=t).map(|s| trace.attention(layer, head, b, t, s)).collect::<Vec<f64>>()
    })?;
    let probs = hmm::enumerate_contexts(spec, max_len)?;
    let mut sums: Vec<Vec<f64>> = (0..max_len).map(|d| vec![0.0; d + 1]).collect();
    let mut totals = vec![0.0; max_len];
    for (row, (seq, p)) in rows.iter().zip(&probs) {
        let d = seq.len() - 1;
        let w = match weighting {
            Weighting::Probability => *p,
            Weighting::Uniform => 1.0,
        };
        totals[d] += w;
        sums[d].iter_mut().zip(row).for_each(|(a, b)| *a += w * b);
    }
    for (row, t) in sums.iter_mut().zip(&totals) {
        row.iter_mut().for_each(|a| *a /= t);
    }
    Ok(MeanPattern { layer, head, weighting, rows: sums })
}

/// Log-linear fit of attention against lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `exp(slope)`: the fitted ratio between consecutive lags.
    pub zeta_hat: f64,
    pub slope: f64,
    pub r2: f64,
    /// Pooled amplitude `c` of `A ~ c * zeta_hat^n`.
    pub amplitude: f64,
    /// The same fit written as `c' * zeta_hat^(n - 1)`.
    pub amplitude_shifted: f64,
    /// `(lag, mean weight)` over the entries used.
    pub lag_means: Vec<(usize, f64)>,
    pub points: usize,
    /// Nonpositive entries left out of the log fit.
    pub excluded: usize,
}

/// Fits `log A[d][s] = c_d + n log(zeta_hat)` over lags `n = d - s >= 1`.
///
/// Every row gets its own intercept, so per-row normalization does not bias
/// the ratio. Source 0 is left out: it is the first token of every context
/// and collects the attention that no later source takes.
pub fn attention_decay_fit(pattern: &MeanPattern) -> Result<DecayFit> {
    let mut excluded = 0;
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut lag_sum = vec![(0.0, 0usize); pattern.max_len()];
    for (d, row) in pattern.rows.iter().enumerate() {
        let mut g = Vec::new();
        for s in 1..d {
            let a = row[s];
            if !(a > 0.0) {
                excluded += 1;
                continue;
            }
            let n = d - s;
            g.push((n as f64, math::ln(a)));
            lag_sum[n].0 += a;
            lag_sum[n].1 += 1;
        }
        groups.push(g);
    }
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    let (mut all_x, mut all_y, mut points) = (0.0, 0.0, 0usize);
    for g in &groups {
        if g.len() < 2 {
            continue;
        }
        let mx = g.iter().map(|p| p.0).sum::<f64>() / g.len() as f64;
        let my = g.iter().map(|p| p.1).sum::<f64>() / g.len() as f64;
        for &(x, y) in g {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
            all_x += x;
            all_y += y;
            points += 1;
        }
    }
    if points == 0 || sxx == 0.0 {
        return Err(Error::Empty("decay fit needs a row with two positive off-diagonal entries past source 0"));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { slope * sxy / syy } else { 1.0 };
    let zeta_hat = math::exp(slope);
    let intercept = all_y / points as f64 - slope * all_x / points as f64;
    let amplitude = math::exp(intercept);
    let lag_means = lag_sum
        .iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(n, (s, c))| (n, s / *c as f64))
        .collect();
    Ok(DecayFit {
        zeta_hat,
        slope,
        r2,
        amplitude,
        amplitude_shifted: amplitude * zeta_hat,
        lag_means,
        points,
        excluded,
    })
}

/// Mean attention mass on even and odd lags over destinations `d >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityMass {
    pub head: usize,
    pub even: f64,
    pub odd: f64,
}

impl ParityMass {
    /// 0 when even lags dominate, 1 when odd lags do.
    pub fn dominant(&self) -> usize {
        usize::from(self.odd > self.even)
    }
}

pub fn parity_masses(pattern: &MeanPattern) -> Result<ParityMass> {
    if pattern.max_len() < 2 {
        return Err(Error::Empty("parity masses need destinations past the first"));
    }
    let (mut even, mut odd) = (0.0, 0.0);
    for (d, row) in pattern.rows.iter().enumerate().skip(1) {
        for (s, a) in row.iter().enumerate() {
            if (d - s) % 2 == 0 {
                even += a;
            } else {
                odd += a;
            }
        }
    }
    let n = (pattern.max_len() - 1) as f64;
    Ok(ParityMass { head: pattern.head, even: even / n, odd: odd / n })
}
