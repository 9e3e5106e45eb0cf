use mess3_core::exec::{Executor, Serial};
use mess3_core::hmm::build_mess3;
use mess3_core::nn::{forward, ModelConfig};
use mess3_core::train::{map_contexts, train, Checkpoint, TrainConfig};
use mess3_lab::checkpoint::{self, CheckpointFile};
use mess3_lab::formats::{num, read_metrics, MetricsWriter};
use mess3_lab::manifest::{sha256_hex, Manifest};
use mess3_lab::{LabError, Threads};
use proptest::prelude::*;
use tempfile::TempDir;

fn small_run() -> mess3_core::train::TrainRun {
    let spec = build_mess3(0.6, 0.15).unwrap();
    let model = ModelConfig { d_model: 12, d_ff: 8, max_ctx: 6, layer_norm: true, ..ModelConfig::default() };
    let config = TrainConfig { batch_size: 4, total_tokens: 240, seq_len: 6, checkpoint_every: 5, eval_max_len: 3, ..TrainConfig::default() };
    train(&spec, model, config, &Serial).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let run = small_run();
    let tmp = TempDir::new().unwrap();
    let tokens = [0u8, 2, 1, 1, 0, 2];
    for ck in &run.checkpoints {
        let path = tmp.path().join(checkpoint::file_name(ck.step));
        checkpoint::save(&path, ck, 9).unwrap();
        let (file, params) = checkpoint::load(&path).unwrap();
        assert_eq!(file.step, ck.step);
        assert_eq!(file.seed, 9);
        assert_eq!(file.metrics.kl, ck.kl);
        assert_eq!(params, ck.params);
        let a = forward(&ck.params, &tokens).unwrap();
        let b = forward(&params, &tokens).unwrap();
        assert_eq!(a.logits, b.logits);
    }
    assert_eq!(checkpoint::list_steps(tmp.path()).unwrap(), vec![0, 5, 10]);
}

#[test]
fn checkpoint_tensors_are_little_endian_base64() {
    let run = small_run();
    let file = CheckpointFile::new(run.last(), 1);
    let blob = &file.tensors["embed.token"];
    assert_eq!(blob.shape, vec![3, 12]);
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD.decode(&blob.data).unwrap();
    let first = f64::from_le_bytes(bytes[..8].try_into().unwrap());
    assert_eq!(first, run.last().params.tensor("embed.token").unwrap()[0]);
    assert_eq!(file.tensors.len(), run.last().params.layout.tensors.len());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let run = small_run();
    let mut file = CheckpointFile::new(run.last(), 1);
    file.tensors.get_mut("unembed").unwrap().shape = vec![3, 12];
    assert!(matches!(file.params(), Err(LabError::Format { .. })));
    let mut file = CheckpointFile::new(run.last(), 1);
    file.tensors.remove("embed.pos");
    assert!(file.params().is_err());
    let mut file = CheckpointFile::new(run.last(), 1);
    file.tensors.get_mut("embed.pos").unwrap().data = "AAAA".into();
    assert!(file.params().is_err());
    let tmp = TempDir::new().unwrap();
    assert!(matches!(checkpoint::load(&tmp.path().join("none.ckpt")), Err(LabError::Missing(_))));
    assert_eq!(LabError::Missing(tmp.path().into()).exit_code(), 4);
}

#[test]
fn metrics_round_trip() {
    let run = small_run();
    let mut buf = Vec::new();
    {
        let mut w = MetricsWriter::new(&mut buf).unwrap();
        for ck in &run.checkpoints {
            w.push(ck).unwrap();
        }
    }
    let rows = read_metrics(buf.as_slice()).unwrap();
    let expect: Vec<&Checkpoint> = run.checkpoints.iter().collect();
    assert_eq!(rows.len(), expect.len());
    for (r, ck) in rows.iter().zip(expect) {
        assert_eq!((r.step, r.loss, r.kl, r.probe_loss), (ck.step, ck.train_loss, ck.kl, ck.probe_loss));
    }
    assert!(String::from_utf8(buf).unwrap().starts_with("step,loss,kl,probe_loss\n"));
}

#[test]
fn manifest_digests_track_file_contents() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("a.txt"), "abc").unwrap();
    let mut m = Manifest::new("test", 3, &serde_json::json!({"k": 1})).unwrap();
    m.record(tmp.path(), "a.txt").unwrap();
    assert_eq!(m.outputs["a.txt"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    m.write(tmp.path()).unwrap();
    assert_eq!(Manifest::read(tmp.path()).unwrap(), m);
    assert!(m.mismatches(tmp.path()).unwrap().is_empty());
    std::fs::write(tmp.path().join("a.txt"), "abd").unwrap();
    assert_eq!(m.mismatches(tmp.path()).unwrap(), vec!["a.txt".to_string()]);
    assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

#[test]
fn thread_pool_matches_serial() {
    let model = ModelConfig { d_model: 12, d_ff: 8, max_ctx: 6, ..ModelConfig::default() };
    let params = mess3_core::train::initial_params(model, 4).unwrap();
    let f = |trace: &mess3_core::nn::ForwardTrace, b: usize, t: usize, i: usize| (i, trace.logits_row(b, t).to_vec());
    let serial = map_contexts(&params, 5, &Serial, f).unwrap();
    for threads in [1, 2, 5] {
        assert_eq!(map_contexts(&params, 5, &Threads::new(threads), f).unwrap(), serial);
    }
    let pool = Threads::new(3);
    let chunks = pool.map_chunks(10, 3, |r| r.collect::<Vec<_>>());
    assert_eq!(chunks, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9]]);
}

proptest! {
    #[test]
    fn seventeen_digits_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let back: f64 = num(v).parse().unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }
}
