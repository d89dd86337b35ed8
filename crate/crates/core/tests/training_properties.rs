use indexmap::IndexMap;
use pat_core::attention::{BiasMode, BiasSharing};
use pat_core::model::{ModelConfig, ParamStore};
use pat_core::training::{
    adamw_step, cosine_lr, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AdamWConfig,
    OptimState, SynthDataset, Trainer, TrainSpec, CHECKPOINT_VERSION,
};
use pat_core::{Error, Tensor};
use proptest::prelude::*;

fn tiny() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        embed_dim: 8,
        depths: [1, 0, 1, 1],
        heads: [2, 2, 4, 8],
        mlp_ratio: 2,
        bias_modes: [BiasMode::Vector; 4],
        bias_sharing: BiasSharing::Common,
        block_bias: true,
        winnow: true,
        num_classes: 4,
        image_side: 32,
    }
}

fn small_spec(cfg: &ModelConfig, steps: u64) -> TrainSpec {
    let mut spec = TrainSpec::desk(cfg, steps, 21);
    spec.batch_size = 4;
    spec.dataset.size = 16;
    spec
}

fn trained(steps: u64) -> Trainer<f32> {
    let cfg = tiny();
    let mut t = Trainer::new(cfg.clone(), small_spec(&cfg, 6)).unwrap();
    for _ in 0..steps {
        t.step().unwrap();
    }
    t
}

#[test]
fn checkpoint_bytes_round_trip() {
    let t = trained(2);
    let bytes = encode_checkpoint(&t.checkpoint());
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, t.checkpoint());
    assert_eq!(encode_checkpoint(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.patc");
    save_checkpoint(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_checkpoint(&path).unwrap(), back);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&trained(1).checkpoint());

    let mut versioned = bytes.clone();
    versioned[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match decode_checkpoint(&versioned) {
        Err(Error::CheckpointVersion { found, expected }) => {
            assert_eq!((found, expected), (CHECKPOINT_VERSION + 1, CHECKPOINT_VERSION));
        }
        other => panic!("expected a version error, got {other:?}"),
    }

    for cut in [0, 3, 7, 11, 100, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
    }
    for pos in [9, 40, bytes.len() / 3, bytes.len() - 2] {
        let mut flipped = bytes.clone();
        flipped[pos] ^= 0x10;
        assert!(decode_checkpoint(&flipped).is_err(), "bit flip at {pos} accepted");
    }
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_checkpoint(&magic).is_err());
}

#[test]
fn checkpoint_shapes_must_match_the_config() {
    let mut ck = trained(0).checkpoint();
    let mut params = ParamStore::new();
    for (name, t) in ck.params.iter() {
        let t = if name == "head.bias" { Tensor::zeros(&[7]) } else { t.clone() };
        params.insert(name, t);
    }
    ck.params = params;
    assert!(decode_checkpoint(&encode_checkpoint(&ck)).is_err());

    let mut ck = trained(0).checkpoint();
    ck.config.num_classes = 5;
    assert!(decode_checkpoint(&encode_checkpoint(&ck)).is_err());
}

#[test]
fn resume_matches_an_unbroken_run() {
    let mut whole = trained(0);
    let whole_log: Vec<_> = (0..6).map(|_| whole.step().unwrap()).collect();

    let first = trained(3);
    let bytes = encode_checkpoint(&first.checkpoint());
    let mut resumed = Trainer::<f32>::from_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.step_count(), 3);
    let tail = resumed.run(|_| {}).unwrap();

    assert_eq!(tail.len(), 3);
    for (a, b) in tail.iter().zip(&whole_log[3..]) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
    assert!(resumed.model.params.bitwise_eq(&whole.model.params));
    assert_eq!(encode_checkpoint(&resumed.checkpoint()), encode_checkpoint(&whole.checkpoint()));
}

#[test]
fn training_is_thread_count_invariant() {
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| encode_checkpoint(&trained(3).checkpoint()))
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn every_bias_mode_trains() {
    for mode in BiasMode::ALL {
        let mut cfg = tiny();
        cfg.bias_modes = [mode; 4];
        let mut t = Trainer::<f32>::new(cfg.clone(), small_spec(&cfg, 4)).unwrap();
        let init = t.model.params.clone();
        let log = t.run(|_| {}).unwrap();
        assert_eq!(log.len(), 4);
        assert!(log.iter().all(|m| m.loss.is_finite()), "{mode}");
        // the last stage is a single token here, where softmax ignores any bias
        let first_stage = |n: &str| n.starts_with("stages.0.") && n.contains("kernel_bias");
        for (name, p) in t.model.params.iter().filter(|(n, _)| first_stage(n)) {
            assert!(!p.bitwise_eq(init.get(name).unwrap()), "{mode}: {name} never moved");
        }
    }
}

#[test]
fn dataset_is_a_pure_function_of_its_spec() {
    let cfg = tiny();
    let a = SynthDataset::for_model(&cfg, 5, 0.1, 32).unwrap();
    let b = SynthDataset::for_model(&cfg, 5, 0.1, 32).unwrap();
    let c = SynthDataset::for_model(&cfg, 6, 0.1, 32).unwrap();
    let (x, y) = a.sample::<f32>(17);
    assert!(x.bitwise_eq(&b.sample::<f32>(17).0));
    assert!(!x.bitwise_eq(&c.sample::<f32>(17).0));
    assert_eq!(y, 17 % 4);
    assert_eq!(x.shape(), &[3, 32, 32]);
    assert_eq!(a.batch_indices(3, 10), (30..40).map(|i| i % 32).collect::<Vec<_>>());
}

#[test]
fn adamw_first_step_matches_hand_computation() {
    let hyper = AdamWConfig::default();
    let mut params = ParamStore::new();
    params.insert("w", Tensor::new(vec![2], vec![0.5f64, -2.0]).unwrap());
    let mut state = OptimState::new(&params);
    let mut grads = IndexMap::new();
    grads.insert("w".to_string(), Tensor::new(vec![2], vec![0.25, -4.0]).unwrap());
    adamw_step(&mut params, &grads, &mut state, &hyper, 1e-2).unwrap();
    // m_hat = g and v_hat = g^2 at step one, so the step is lr * sign(g) up to eps
    for (p0, g, p1) in [(0.5f64, 0.25f64, 0), (-2.0, -4.0, 1)] {
        let expect = p0 * (1.0 - 1e-2 * 0.05) - 1e-2 * g / (g.abs() + 1e-8);
        assert!((params.get("w").unwrap().data()[p1] - expect).abs() < 1e-15);
    }
    assert_eq!(state.step, 1);

    grads.insert("w".to_string(), Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap());
    let snapshot = params.clone();
    assert!(adamw_step(&mut params, &grads, &mut state, &hyper, 1e-2).is_err());
    assert_eq!(params, snapshot);
    assert_eq!(state.step, 1);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
    assert!((cosine_lr(1e-3, 50, 100) - 5e-4).abs() < 1e-18);
    assert!(cosine_lr(1e-3, 100, 100).abs() < 1e-18);
    assert!(cosine_lr(1e-3, 10, 100) > cosine_lr(1e-3, 11, 100));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adamw_ignores_gradient_map_order(
        values in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..6), 2..6),
        perm_seed: u64,
    ) {
        let mut params = ParamStore::new();
        let mut grads = IndexMap::new();
        for (i, v) in values.iter().enumerate() {
            params.insert(format!("p{i}"), Tensor::new(vec![v.len()], v.clone()).unwrap());
            grads.insert(format!("p{i}"), Tensor::new(vec![v.len()], v.iter().map(|x| x * 0.3 - 0.1).collect()).unwrap());
        }
        let mut shuffled: Vec<_> = grads.clone().into_iter().collect();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (perm_seed as usize).wrapping_mul(i + 7) % n);
        }
        let shuffled: IndexMap<_, _> = shuffled.into_iter().collect();

        let hyper = AdamWConfig::default();
        let (mut a, mut b) = (params.clone(), params.clone());
        let (mut sa, mut sb) = (OptimState::new(&params), OptimState::new(&params));
        for _ in 0..3 {
            adamw_step(&mut a, &grads, &mut sa, &hyper, 1e-3).unwrap();
            adamw_step(&mut b, &shuffled, &mut sb, &hyper, 1e-3).unwrap();
        }
        prop_assert!(a.bitwise_eq(&b));
    }
}
