//! Adam, online next-token training on sampled Mess3 sequences, and exact
//! evaluation against the optimal (Bayesian) predictor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::hmm::{self, HmmSpec};
use crate::linalg;
use crate::math;
use crate::nn::{self, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Sequences per forward/backward chunk; fixed so results never depend on
/// the executor.
pub const GRAD_CHUNK: usize = 16;
/// Length-`max_len` sequences per chunk when enumerating contexts.
pub const ENUM_CHUNK: usize = 243;

const DIVERGENCE_WINDOW: usize = 50;
const PROBE_SEQUENCES: usize = 256;

const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_PROBE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One Adam update with bias correction and no weight decay.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Config(format!(
            "adam shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    state.t += 1;
    let t = state.t.min(u32::MAX as u64) as u32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Tokens are counted as `batch_size * seq_len * steps`; the step count is
    /// `total_tokens / (batch_size * seq_len)`, rounded down.
    pub total_tokens: u64,
    pub seq_len: usize,
    /// Steps between checkpoints; the final step is always checkpointed.
    pub checkpoint_every: u64,
    /// Longest context used for the KL recorded at each checkpoint.
    pub eval_max_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            adam: AdamConfig::default(),
            total_tokens: 2_000_000,
            seq_len: 10,
            checkpoint_every: 250,
            eval_max_len: 8,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> u64 {
        self.total_tokens / (self.batch_size * self.seq_len) as u64
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.batch_size == 0 || self.seq_len == 0 || self.checkpoint_every == 0 || self.eval_max_len == 0 {
            return Err(Error::Config("batch_size, seq_len, checkpoint_every and eval_max_len must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.adam.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if self.seq_len > model.max_ctx {
            return Err(Error::Context { len: self.seq_len, max_ctx: model.max_ctx });
        }
        if self.eval_max_len > model.max_ctx {
            return Err(Error::Context { len: self.eval_max_len, max_ctx: model.max_ctx });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: ModelParams,
    /// Mean training loss since the previous checkpoint (probe loss at step 0).
    pub train_loss: f64,
    pub probe_loss: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub spec: HmmSpec,
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub checkpoints: Vec<Checkpoint>,
    /// Training loss of every step, starting at step 1.
    pub step_losses: Vec<f64>,
}

impl TrainRun {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a run always has the initial checkpoint")
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The initial parameters a run with this seed starts from.
pub fn initial_params(model: ModelConfig, seed: u64) -> Result<ModelParams> {
    nn::init_model(model, &mut rng_stream(seed, STREAM_INIT))
}

/// `batch` sampled sequences of `seq_len + 1` tokens split into inputs and
/// shifted targets.
pub fn sample_batch<R: rand::Rng + ?Sized>(
    spec: &HmmSpec,
    rng: &mut R,
    batch: usize,
    seq_len: usize,
) -> (Vec<u8>, Vec<u8>) {
    let mut inputs = Vec::with_capacity(batch * seq_len);
    let mut targets = Vec::with_capacity(batch * seq_len);
    let mut buf = Vec::with_capacity(seq_len + 1);
    for _ in 0..batch {
        buf.clear();
        hmm::sample_into(spec, rng, seq_len + 1, &mut buf);
        inputs.extend_from_slice(&buf[..seq_len]);
        targets.extend_from_slice(&buf[1..]);
    }
    (inputs, targets)
}

/// Trains without observing checkpoints.
pub fn train<E: Executor>(spec: &HmmSpec, model: ModelConfig, config: TrainConfig, exec: &E) -> Result<TrainRun> {
    train_with(spec, model, config, exec, |_| Ok(()))
}

/// Trains and calls `on_checkpoint` as each checkpoint is taken.
pub fn train_with<E, F>(
    spec: &HmmSpec,
    model: ModelConfig,
    config: TrainConfig,
    exec: &E,
    mut on_checkpoint: F,
) -> Result<TrainRun>
where
    E: Executor,
    F: FnMut(&Checkpoint) -> Result<()>,
{
    model.validate()?;
    config.validate(&model)?;
    let mut params = initial_params(model, config.seed)?;
    let mut data_rng = rng_stream(config.seed, STREAM_DATA);
    let (probe_in, probe_tg) = sample_batch(spec, &mut rng_stream(config.seed, STREAM_PROBE), PROBE_SEQUENCES, config.seq_len);
    let probe = |p: &ModelParams| -> Result<f64> {
        Ok(nn::batch_loss_and_grad(p, &probe_in, &probe_tg, config.seq_len, exec, GRAD_CHUNK)?.loss)
    };

    let steps = config.steps();
    let mut state = AdamState::new(params.data.len());
    let mut checkpoints = Vec::new();
    let mut step_losses = Vec::with_capacity(steps as usize);

    let first = {
        let probe_loss = probe(&params)?;
        let kl = evaluate_kl(&params, spec, config.eval_max_len, exec)?;
        Checkpoint { step: 0, params: params.clone(), train_loss: probe_loss, probe_loss, kl }
    };
    on_checkpoint(&first)?;
    checkpoints.push(first);

    let threshold = 2.0 * math::ln(model.vocab as f64);
    let mut since_last = 0.0;
    let mut since_count = 0u64;
    for step in 1..=steps {
        let (inputs, targets) = sample_batch(spec, &mut data_rng, config.batch_size, config.seq_len);
        let g = nn::batch_loss_and_grad(&params, &inputs, &targets, config.seq_len, exec, GRAD_CHUNK)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence { step, loss: g.loss, window: 1 });
        }
        adam_step(&mut params.data, &g.grad, &mut state, &config.adam)?;
        step_losses.push(g.loss);
        since_last += g.loss;
        since_count += 1;
        if step_losses.len() >= DIVERGENCE_WINDOW {
            let recent = &step_losses[step_losses.len() - DIVERGENCE_WINDOW..];
            let mean = recent.iter().sum::<f64>() / DIVERGENCE_WINDOW as f64;
            if mean > threshold {
                return Err(Error::Divergence { step, loss: mean, window: DIVERGENCE_WINDOW });
            }
        }
        if step % config.checkpoint_every == 0 || step == steps {
            params.check_finite()?;
            let ck = Checkpoint {
                step,
                params: params.clone(),
                train_loss: since_last / since_count as f64,
                probe_loss: probe(&params)?,
                kl: evaluate_kl(&params, spec, config.eval_max_len, exec)?,
            };
            on_checkpoint(&ck)?;
            checkpoints.push(ck);
            since_last = 0.0;
            since_count = 0;
        }
    }
    Ok(TrainRun { spec: spec.clone(), model, config, checkpoints, step_losses })
}

/// Calls `f(trace, b, t, context)` for every context of length
/// `1..=max_len`, reading each context from the final position of one
/// forward pass. Every context appears once; results come back indexed by
/// shortlex context order.
pub fn map_contexts<E, T, F>(params: &ModelParams, max_len: usize, exec: &E, f: F) -> Result<Vec<T>>
where
    E: Executor,
    T: Send,
    F: Fn(&nn::ForwardTrace, usize, usize, usize) -> T + Sync,
{
    if max_len == 0 || max_len > params.config.max_ctx {
        return Err(Error::Context { len: max_len, max_ctx: params.config.max_ctx });
    }
    if max_len > hmm::MAX_ENUMERATION_LEN {
        return Err(Error::ResourceLimit {
            what: "context length",
            requested: max_len,
            limit: hmm::MAX_ENUMERATION_LEN,
        });
    }
    let n_seq = hmm::VOCAB.pow(max_len as u32);
    // Context z_1..z_{t+1} is read from position t of the sequence that pads
    // it with zeros, so every prefix shares one causal forward pass.
    let parts = exec.map_chunks(n_seq, ENUM_CHUNK, |r| -> Result<Vec<(usize, T)>> {
        let mut tokens = Vec::with_capacity(r.len() * max_len);
        for i in r.clone() {
            let mut digits = vec![0u8; max_len];
            let mut k = i;
            for slot in digits.iter_mut().rev() {
                *slot = (k % hmm::VOCAB) as u8;
                k /= hmm::VOCAB;
            }
            tokens.extend_from_slice(&digits);
        }
        let trace = nn::forward_batch(params, &tokens, max_len)?;
        let mut out = Vec::new();
        for b in 0..r.len() {
            let seq = &tokens[b * max_len..(b + 1) * max_len];
            let zeros = seq.iter().rev().take_while(|&&z| z == 0).count();
            for t in (max_len - 1 - zeros.min(max_len - 1))..max_len {
                out.push((hmm::context_index(&seq[..=t]), f(&trace, b, t, hmm::context_index(&seq[..=t]))));
            }
        }
        Ok(out)
    });
    let mut slots: Vec<Option<T>> = (0..hmm::context_count(max_len)).map(|_| None).collect();
    for part in parts {
        for (idx, v) in part? {
            slots[idx] = Some(v);
        }
    }
    Ok(slots.into_iter().map(|v| v.expect("every context is visited")).collect())
}

/// Exact expected losses over all contexts of length `1..=max_len`, weighted
/// by context probability and averaged over lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kl: f64,
    pub cross_entropy: f64,
    pub optimal_cross_entropy: f64,
}

/// Optimal next-token distribution and probability for every context, in
/// shortlex order.
pub fn optimal_predictions(spec: &HmmSpec, max_len: usize) -> Result<Vec<([f64; 3], f64)>> {
    Ok(hmm::enumerate_forward(spec, max_len)?
        .into_iter()
        .map(|(_, v)| {
            let p = linalg::sum3(&v);
            let next = spec.emission_probs(&linalg::scale3(&v, 1.0 / p));
            (next, p)
        })
        .collect())
}

fn entropy_terms(p: &[f64; 3], log_q: &[f64]) -> (f64, f64) {
    let (mut ce, mut h) = (0.0, 0.0);
    for z in 0..3 {
        if p[z] > 0.0 {
            ce -= p[z] * log_q[z];
            h -= p[z] * math::ln(p[z]);
        }
    }
    (ce, h)
}

/// Expected next-token loss of the Bayes-optimal predictor.
pub fn optimal_cross_entropy(spec: &HmmSpec, max_len: usize) -> Result<f64> {
    let total: f64 = optimal_predictions(spec, max_len)?
        .iter()
        .map(|(next, p)| {
            let log_next = [math::ln(next[0]), math::ln(next[1]), math::ln(next[2])];
            p * entropy_terms(next, &log_next).1
        })
        .sum();
    Ok(total / max_len as f64)
}

pub fn evaluate<E: Executor>(params: &ModelParams, spec: &HmmSpec, max_len: usize, exec: &E) -> Result<EvalReport> {
    if params.config.vocab != hmm::VOCAB {
        return Err(Error::Config(format!("model vocabulary {} differs from the process's 3 tokens", params.config.vocab)));
    }
    let optimal = optimal_predictions(spec, max_len)?;
    let log_q = map_contexts(params, max_len, exec, |trace, b, t, _| {
        let row = trace.logits_row(b, t);
        let lse = nn::log_sum_exp(row);
        [row[0] - lse, row[1] - lse, row[2] - lse]
    })?;
    let (mut ce, mut h) = (0.0, 0.0);
    for ((next, p), lq) in optimal.iter().zip(&log_q) {
        let (c, e) = entropy_terms(next, lq);
        ce += p * c;
        h += p * e;
    }
    let n = max_len as f64;
    Ok(EvalReport { kl: (ce - h) / n, cross_entropy: ce / n, optimal_cross_entropy: h / n })
}

/// Probability-weighted mean of `KL(optimal || model)` over all contexts of
/// length `1..=max_len`.
pub fn evaluate_kl<E: Executor>(params: &ModelParams, spec: &HmmSpec, max_len: usize, exec: &E) -> Result<f64> {
    Ok(evaluate(params, spec, max_len, exec)?.kl)
}
