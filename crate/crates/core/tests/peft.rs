mod common;

use common::{random_adapters, random_params, tiny_config};
use fiat::numcore::{adam_step, AdamConfig, GradTape, OptimizerState, Tensor};
use fiat::peft::{
    adapted_forward, init_adapters, merge, read_adapters, write_adapters, AdapterConfig, PeftError,
};
use fiat::toylm::{
    forward_logits, sequence_loss, slot, BoundModel, CheckpointKind, Linear, ModelConfig, ModelParams,
    TrainSequence, BOS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u32> {
    let n = rng.random_range(1..max_len);
    std::iter::once(BOS)
        .chain((0..n).map(|_| rng.random_range(0..256)))
        .collect()
}

#[test]
fn zero_init_adapters_reproduce_base_logits_exactly() {
    for seed in 0..10 {
        let p = random_params(tiny_config(), seed, 0.4);
        let cfg = AdapterConfig {
            targets: Linear::ALL.to_vec(),
            rank: 2,
            max_trainable_fraction: 1.0,
            ..AdapterConfig::default()
        };
        let a = init_adapters(&p, &cfg, seed).unwrap();
        let tokens = random_tokens(&mut ChaCha8Rng::seed_from_u64(seed), 20);
        let base = forward_logits(&p, &tokens).unwrap();
        assert_eq!(adapted_forward(&p, &a, &tokens).unwrap().bits(), base.bits());
        assert_eq!(merge(&p, &a).unwrap().bits(), p.bits());
    }
}

#[test]
fn trainable_fraction_matches_direct_count() {
    let cfg = ModelConfig::default();
    let p = ModelParams::init(cfg, CheckpointKind::InstructionPretrained, 1).unwrap();
    let a = init_adapters(&p, &AdapterConfig::default(), 1).unwrap();
    let d = cfg.d_model;
    let lora = cfg.n_layers * 2 * (4 * d + d * 4);
    let per_layer = 2 * d + 4 * d * d + 2 * d + cfg.d_ff * d + cfg.d_ff + d * cfg.d_ff + d;
    let base = cfg.vocab_size * d + cfg.max_seq_len * d + cfg.n_layers * per_layer + 2 * d + cfg.vocab_size * d;
    assert_eq!(a.num_trainable(), lora);
    assert_eq!(p.num_params(), base);
    let fraction = lora as f64 / base as f64;
    assert_eq!(a.trainable_fraction(&p), fraction);
    assert!(fraction < 0.05, "{fraction}");
}

#[test]
fn rank_at_or_above_model_width_is_refused() {
    let p = random_params(tiny_config(), 0, 0.1);
    for rank in [8, 9, 100] {
        let cfg = AdapterConfig {
            rank,
            max_trainable_fraction: 1.0,
            ..AdapterConfig::default()
        };
        assert!(matches!(init_adapters(&p, &cfg, 0), Err(PeftError::RankTooLarge { .. })));
    }
}

#[test]
fn rescaling_the_factors_leaves_output_unchanged() {
    for seed in 0..10 {
        let p = random_params(tiny_config(), seed, 0.4);
        let a = random_adapters(&p, 2, seed, 0.5);
        let c = 1.0 + seed as f64 * 0.7;
        let mut b = a.clone();
        for pair in &mut b.pairs {
            pair.a = Tensor::zeros(pair.a.shape()).add_scaled(&pair.a, c).unwrap();
            pair.b = Tensor::zeros(pair.b.shape()).add_scaled(&pair.b, 1.0 / c).unwrap();
        }
        let tokens = random_tokens(&mut ChaCha8Rng::seed_from_u64(seed), 20);
        let x = adapted_forward(&p, &a, &tokens).unwrap();
        let y = adapted_forward(&p, &b, &tokens).unwrap();
        assert!(x.max_abs_diff(&y) <= 1e-9, "{}", x.max_abs_diff(&y));
    }
}

/// `W + (alpha/r)·B·A` by explicit loops.
fn dense_update(w: &Tensor, a: &Tensor, b: &Tensor, scale: f64) -> Tensor {
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    let r = a.shape()[0];
    let mut out = w.data().to_vec();
    for o in 0..d_out {
        for i in 0..d_in {
            let mut s = 0.0;
            for k in 0..r {
                s += b.data()[o * r + k] * a.data()[k * d_in + i];
            }
            out[o * d_in + i] += scale * s;
        }
    }
    Tensor::new(vec![d_out, d_in], out).unwrap()
}

#[test]
fn adapted_forward_matches_dense_materialisation() {
    for seed in 0..10 {
        let p = random_params(tiny_config(), seed, 0.4);
        let a = random_adapters(&p, 3, seed, 0.5);
        let mut dense = p.clone();
        for pair in &a.pairs {
            let i = slot::linear(pair.layer, pair.target);
            dense.tensors[i] = dense_update(&p.tensors[i], &pair.a, &pair.b, a.scale());
        }
        let tokens = random_tokens(&mut ChaCha8Rng::seed_from_u64(seed + 100), 20);
        let x = adapted_forward(&p, &a, &tokens).unwrap();
        let y = forward_logits(&dense, &tokens).unwrap();
        assert!(x.max_abs_diff(&y) <= 1e-10, "{}", x.max_abs_diff(&y));
    }
}

#[test]
fn merged_model_matches_adapted_forward() {
    let p = ModelParams::init(ModelConfig::default(), CheckpointKind::InstructionPretrained, 5).unwrap();
    let mut a = init_adapters(&p, &AdapterConfig::default(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in a.tensors_mut() {
        let data = (0..t.numel()).map(|_| rng.random_range(-0.2..0.2)).collect();
        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    let merged = merge(&p, &a).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let tokens = random_tokens(&mut rng, 40);
        let x = adapted_forward(&p, &a, &tokens).unwrap();
        let y = forward_logits(&merged, &tokens).unwrap();
        worst = worst.max(x.max_abs_diff(&y));
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn merging_twice_is_refused() {
    let p = random_params(tiny_config(), 1, 0.4);
    let a = random_adapters(&p, 2, 1, 0.5);
    let once = merge(&p, &a).unwrap();
    assert_ne!(once.bits(), p.bits());
    assert!(matches!(merge(&once, &a), Err(PeftError::AlreadyMerged)));
}

#[test]
fn adapter_training_leaves_base_weights_untouched() {
    let p = random_params(tiny_config(), 2, 0.3);
    let before = p.bits();
    let mut a = init_adapters(
        &p,
        &AdapterConfig {
            rank: 2,
            max_trainable_fraction: 1.0,
            ..AdapterConfig::default()
        },
        2,
    )
    .unwrap();
    let batch = vec![TrainSequence::from_pair(b"ab", b"cd"), TrainSequence::from_pair(b"x", b"yz")];
    let mut opt = OptimizerState::new(AdamConfig::default(), a.tensors());
    let start = a.clone();
    for _ in 0..5 {
        let mut tape = GradTape::new();
        let mut m = BoundModel::bind(&mut tape, &p, false);
        a.bind(&mut tape, &mut m, true);
        let l = sequence_loss(&mut tape, &m, &batch).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.keys().all(|k| k >= fiat::peft::ADAPTER_KEY_BASE));
        let grads: Vec<Tensor> = (0..a.tensors().len())
            .map(|i| g.get(fiat::peft::ADAPTER_KEY_BASE + i).cloned().unwrap())
            .collect();
        let current: Vec<Tensor> = a.tensors().into_iter().cloned().collect();
        for (t, new) in a.tensors_mut().into_iter().zip(adam_step(&mut opt, &current, &grads).unwrap()) {
            *t = new;
        }
    }
    assert_eq!(p.bits(), before);
    assert_ne!(a, start);
}

#[test]
fn adapter_file_round_trips() {
    let p = random_params(tiny_config(), 3, 0.4);
    let a = random_adapters(&p, 2, 3, 0.5);
    let mut buf = Vec::new();
    write_adapters(&mut buf, &a).unwrap();
    assert_eq!(&buf[..8], fiat::peft::ADAPTER_MAGIC);
    assert_eq!(read_adapters(buf.as_slice()).unwrap(), a);
}
