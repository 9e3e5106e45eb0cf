use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::belief::{source_vector, ConstrainedVariant};
use crate::hmm::{HmmSpec, VOCAB};
use crate::linalg::sub3;
use crate::math;
use crate::nn::{ModelConfig, ModelParams};
use crate::spectral::decompose;
use crate::{Error, Result};

/// Token-embedding scale.
const N: f64 = 1000.0;
/// Largest key coefficient; larger logits are carried by the query scale.
const KEY_BOUND: f64 = 2.0;

// Zero-mean orthonormal directions `(e_{2i} - e_{2i+1}) / sqrt(2)`, which
// layer normalization leaves untouched up to scale.
const TOKEN: usize = 0;
const QUERY: usize = 3;
const KEY: usize = 4;
const FILL: usize = 5;
const OUT: usize = 6;
const DIRECTIONS: usize = 9;

fn direction(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[2 * i] = core::f64::consts::FRAC_1_SQRT_2;
    v[2 * i + 1] = -core::f64::consts::FRAC_1_SQRT_2;
    v
}

fn add_scaled(dst: &mut [f64], v: &[f64], s: f64) {
    dst.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
}

/// Weights that realize the single-head theory exactly.
///
/// Every embedding has norm `n_m sqrt(d_model)`, so layer normalization
/// divides position `m` by `n_m`. Keys make the softmax of destination `d`
/// give `zeta^d` to source 0 and `(1 - zeta) zeta^{d-s}` to later sources;
/// values and the output projection turn source `s` into
/// `(pi T^{|z_s} - pi) / A_{s+1,s}` along three reserved directions. The
/// attention output at `d` is then `sum_s zeta^{d-s} (pi T^{|z_s} - pi)`,
/// the constrained rownorm displacement. MLP and unembedding are zero.
pub fn theory_model(spec: &HmmSpec, config: ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    if !config.layer_norm || config.n_heads != 1 || config.vocab != VOCAB {
        return Err(Error::Config("the theory model needs layer norm, one head and three tokens".into()));
    }
    let d = config.d_model;
    if d < 2 * DIRECTIONS {
        return Err(Error::Config(format!("the theory model needs d_model >= {}", 2 * DIRECTIONS)));
    }
    let zeta = decompose(spec)?.zeta()?;
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Regime(format!("the theory model needs 0 < zeta < 1, got {zeta}")));
    }
    let len = config.max_ctx;
    let dir: Vec<Vec<f64>> = (0..DIRECTIONS).map(|i| direction(d, i)).collect();
    let scale_of = |m: usize| if m == 0 { N / (1.0 - zeta) } else { N };
    let mut kappa: Vec<f64> =
        (0..len).map(|m| if m == 0 { 0.0 } else { math::ln(1.0 - zeta) - m as f64 * math::ln(zeta) }).collect();
    let beta = kappa.iter().fold(1.0f64, |acc, k| acc.max(math::abs(*k) / KEY_BOUND));
    kappa.iter_mut().for_each(|k| *k /= beta);

    let mut p = ModelParams::zeros(config)?;
    let gammas: Vec<_> = p.layout.tensors.iter().filter(|t| t.name.ends_with(".gamma")).map(|t| t.range()).collect();
    for r in gammas {
        p.data[r].fill(1.0);
    }
    {
        let tok = p.tensor_mut("embed.token").expect("layout has embed.token");
        for z in 0..VOCAB {
            add_scaled(&mut tok[z * d..(z + 1) * d], &dir[TOKEN + z], N);
        }
    }
    {
        let pos = p.tensor_mut("embed.pos").expect("layout has embed.pos");
        for m in 0..len {
            let n = scale_of(m);
            let a = N / n;
            let fill = d as f64 - a * a - kappa[m] * kappa[m] - 1.0;
            let row = &mut pos[m * d..(m + 1) * d];
            add_scaled(row, &dir[KEY], n * kappa[m]);
            add_scaled(row, &dir[QUERY], n);
            add_scaled(row, &dir[FILL], n * math::sqrt(fill));
        }
    }
    let dh = config.head_dim();
    let root = math::sqrt(dh as f64);
    p.tensor_mut("layer0.head0.w_q").expect("w_q")[..d].copy_from_slice(&dir[QUERY].iter().map(|v| beta * v).collect::<Vec<_>>());
    p.tensor_mut("layer0.head0.w_k").expect("w_k")[..d].copy_from_slice(&dir[KEY].iter().map(|v| root * v).collect::<Vec<_>>());
    {
        let wv = p.tensor_mut("layer0.head0.w_v").expect("w_v");
        for z in 0..VOCAB {
            wv[z * d..(z + 1) * d].copy_from_slice(&dir[TOKEN + z]);
        }
    }
    {
        let wo = p.tensor_mut("layer0.head0.w_o").expect("w_o");
        for z in 0..VOCAB {
            let delta = sub3(&source_vector(spec, z as u8, ConstrainedVariant::Rownorm)?, &spec.pi);
            for k in 0..3 {
                for (i, v) in dir[OUT + k].iter().enumerate() {
                    wo[i * dh + z] += delta[k] * v / (1.0 - zeta);
                }
            }
        }
    }
    Ok(p)
}
