use super::*;
use crate::exec::Serial;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(layer_norm: bool, n_heads: usize) -> ModelConfig {
    ModelConfig { d_model: 8, d_ff: 12, n_heads, n_layers: 2, vocab: 3, max_ctx: 6, layer_norm }
}

fn randomized(config: ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_model(config, &mut rng).unwrap();
    // Give the zero-initialized tensors some signal too.
    for v in p.data.iter_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    p
}

#[test]
fn init_is_deterministic() {
    let c = ModelConfig { n_heads: 2, ..ModelConfig::default() };
    assert_eq!(c.head_dim(), 32);
    let a = init_model(c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = init_model(c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a.data, b.data);
    assert!(a.tensor("embed.pos").unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn config_validation() {
    let bad = ModelConfig { n_heads: 3, ..ModelConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let zero = ModelConfig { d_ff: 0, ..ModelConfig::default() };
    assert!(zero.validate().is_err());
}

#[test]
fn single_token_attends_to_itself() {
    let p = randomized(small(false, 2), 1);
    let tr = forward(&p, &[2]).unwrap();
    for h in 0..2 {
        assert_eq!(tr.attention(0, h, 0, 0, 0), 1.0);
    }
}

#[test]
fn context_limits() {
    let p = randomized(small(false, 1), 1);
    assert_eq!(forward(&p, &[]).unwrap_err(), Error::Context { len: 0, max_ctx: 6 });
    assert_eq!(forward(&p, &[0; 7]).unwrap_err(), Error::Context { len: 7, max_ctx: 6 });
    assert!(matches!(forward(&p, &[3]), Err(Error::InvalidToken { token: 3, .. })));
}

#[test]
fn attention_rows_and_residual_reconstruction() {
    for ln in [false, true] {
        let p = randomized(small(ln, 2), 3);
        let seq = [0u8, 1, 2, 2, 0, 1];
        let tr = forward(&p, &seq).unwrap();
        for (l, lt) in tr.layers.iter().enumerate() {
            for t in 0..seq.len() {
                for h in 0..2 {
                    let row: f64 = (0..seq.len()).map(|s| tr.attention(l, h, 0, t, s)).sum();
                    assert!((row - 1.0).abs() < 1e-12);
                    for s in t + 1..seq.len() {
                        assert_eq!(tr.attention(l, h, 0, t, s), 0.0);
                    }
                }
                let pre = tr.row(&lt.x_pre, 0, t);
                let mid = tr.row(&lt.x_mid, 0, t);
                for j in 0..8 {
                    let mut want = pre[j];
                    for h in 0..2 {
                        for s in 0..=t {
                            want += tr.attention(l, h, 0, t, s) * tr.row(&lt.values[h], 0, s)[j];
                        }
                    }
                    assert!((mid[j] - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_output_projection_leaves_residual() {
    let mut p = randomized(small(false, 1), 4);
    p.tensor_mut("layer0.head0.w_o").unwrap().fill(0.0);
    let tr = forward(&p, &[1, 0, 2]).unwrap();
    assert_eq!(tr.layers[0].x_mid, tr.layers[0].x_pre);
}

#[test]
fn causal_mask_under_perturbation() {
    let p = randomized(small(true, 2), 5);
    let a = forward(&p, &[0, 1, 2, 0, 1]).unwrap();
    let b = forward(&p, &[0, 1, 2, 2, 1]).unwrap();
    for t in 0..3 {
        assert_eq!(a.logits_row(0, t), b.logits_row(0, t));
    }
    assert_ne!(a.logits_row(0, 3), b.logits_row(0, 3));
}

#[test]
fn loss_of_uniform_logits() {
    let p = ModelParams::zeros(small(false, 1)).unwrap();
    let tr = forward(&p, &[0, 1, 2]).unwrap();
    assert!((loss(&tr, &[1, 2, 0]).unwrap() - 3f64.ln()).abs() < 1e-15);
    assert!(loss(&tr, &[1, 2]).is_err());
}

#[test]
fn confident_logits_give_small_loss() {
    let logits = [200.0, 0.0, 0.0];
    assert!(cross_entropy(&logits, 3, &[0]) < 1e-80);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (ln, heads) in [(false, 1), (false, 2), (true, 1), (true, 2)] {
        let p = randomized(small(ln, heads), 9);
        let err = grad_check(&p, &[0, 2, 1, 1, 0], &[2, 1, 1, 0, 0], 1e-5, 200, &mut rng).unwrap();
        assert!(err <= 1e-4, "ln={ln} heads={heads}: {err}");
    }
}

#[test]
fn grad_check_argument_errors() {
    let p = randomized(small(false, 1), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(grad_check(&p, &[0], &[1], 1e-5, 0, &mut rng), Err(Error::Empty(_))));
    assert!(matches!(grad_check(&p, &[0], &[1], 1e-2, 1, &mut rng), Err(Error::Domain { .. })));
}

#[test]
fn unused_positions_get_no_gradient() {
    let p = randomized(small(false, 1), 2);
    let (_, g) = backward(&p, &[0, 1], &[1, 2]).unwrap();
    let pos = p.layout.get("embed.pos").unwrap();
    assert!(g[pos.offset + 2 * 8..pos.offset + pos.len()].iter().all(|&v| v == 0.0));
    assert!(g[pos.offset..pos.offset + 16].iter().any(|&v| v != 0.0));
}

#[test]
fn batch_gradient_is_mean_of_sequence_gradients() {
    let p = randomized(small(true, 2), 6);
    let inputs = [0u8, 1, 2, 2, 2, 0, 1, 1, 0];
    let targets = [1u8, 2, 2, 2, 0, 1, 1, 0, 0];
    let batch = batch_loss_and_grad(&p, &inputs, &targets, 3, &Serial, 2).unwrap();
    let mut sum = alloc::vec![0.0; p.data.len()];
    let mut loss_sum = 0.0;
    for b in 0..3 {
        let (l, g) = backward(&p, &inputs[3 * b..3 * b + 3], &targets[3 * b..3 * b + 3]).unwrap();
        loss_sum += l;
        sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    assert!((batch.loss - loss_sum / 3.0).abs() < 1e-14);
    for (a, b) in batch.grad.iter().zip(&sum) {
        assert!((a - b / 3.0).abs() < 1e-13);
    }
}
