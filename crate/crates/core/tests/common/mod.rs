#![allow(dead_code)]

pub mod cases;
pub mod stub;

use fiat::numcore::{GradTape, Tensor};
use fiat::peft::{AdapterConfig, AdapterSet, ADAPTER_KEY_BASE};
use fiat::toylm::{sequence_loss, BoundModel, CheckpointKind, Linear, ModelConfig, ModelParams, TrainSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 259,
        max_seq_len: 24,
    }
}

/// Params with every entry drawn from a wide distribution, so gradients are
/// well away from zero. Gains sit around 1.
pub fn random_params(cfg: ModelConfig, seed: u64, std: f64) -> ModelParams {
    let mut p = ModelParams::init(cfg, CheckpointKind::RawPretrained, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let layout = fiat::toylm::param_layout(&cfg);
    for (t, (name, _)) in p.tensors.iter_mut().zip(layout) {
        let centre = if name.ends_with(".g") { 1.0 } else { 0.0 };
        let data = (0..t.numel())
            .map(|_| centre + rng.random_range(-std..std))
            .collect();
        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    p
}

/// Adapters on every linear map with both factors random (a zero `B`
/// would leave `A` without gradient).
pub fn random_adapters(params: &ModelParams, rank: usize, seed: u64, std: f64) -> AdapterSet {
    let cfg = AdapterConfig {
        rank,
        alpha: 2.0 * rank as f64,
        targets: Linear::ALL.to_vec(),
        max_trainable_fraction: 1.0,
    };
    let mut set = fiat::peft::init_adapters(params, &cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed);
    for t in set.tensors_mut() {
        let data = (0..t.numel()).map(|_| rng.random_range(-std..std)).collect();
        *t = Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    set
}

pub fn random_batch(cfg: &ModelConfig, seed: u64) -> Vec<TrainSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|i| {
            let plen = rng.random_range(1..6);
            let tlen = rng.random_range(1..5) + i;
            let prompt: Vec<u8> = (0..plen).map(|_| rng.random_range(b'a'..=b'h')).collect();
            let target: Vec<u8> = (0..tlen).map(|_| rng.random_range(b'a'..=b'h')).collect();
            let s = TrainSequence::from_pair(&prompt, &target);
            assert!(s.tokens.len() <= cfg.max_seq_len);
            s
        })
        .collect()
}

fn loss_of(params: &ModelParams, adapters: Option<&AdapterSet>, batch: &[TrainSequence]) -> f64 {
    let mut tape = GradTape::new();
    let mut model = BoundModel::bind(&mut tape, params, false);
    if let Some(a) = adapters {
        a.bind(&mut tape, &mut model, false);
    }
    let loss = sequence_loss(&mut tape, &model, batch).unwrap();
    tape.value(loss).unwrap().item().unwrap()
}

fn nudged(t: &Tensor, i: usize, h: f64) -> Tensor {
    let mut d = t.data().to_vec();
    d[i] += h;
    Tensor::new(t.shape().to_vec(), d).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is zero compare on absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Worst relative error per parameter group, comparing the tape gradient
/// with central differences on `coords_per_group` random coordinates.
pub fn gradcheck(
    params: &ModelParams,
    adapters: &AdapterSet,
    batch: &[TrainSequence],
    coords_per_group: usize,
    seed: u64,
) -> Vec<(String, f64)> {
    let mut tape = GradTape::new();
    let mut model = BoundModel::bind(&mut tape, params, true);
    adapters.bind(&mut tape, &mut model, true);
    let loss = sequence_loss(&mut tape, &model, batch).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let layout = fiat::toylm::param_layout(&params.config);
    // Rows of the token table that the batch actually reads.
    let used: Vec<usize> = batch
        .iter()
        .flat_map(|s| s.tokens.iter().map(|&t| t as usize))
        .collect();
    let d = params.config.d_model;
    for (gi, (name, _)) in layout.iter().enumerate() {
        let t = &params.tensors[gi];
        let g = grads.get(gi).expect("every base tensor gets a gradient");
        let mut worst: f64 = 0.0;
        for _ in 0..coords_per_group {
            let i = if gi == 0 {
                used[rng.random_range(0..used.len())] * d + rng.random_range(0..d)
            } else {
                rng.random_range(0..t.numel())
            };
            let mut plus = params.clone();
            plus.tensors[gi] = nudged(t, i, FD_STEP);
            let mut minus = params.clone();
            minus.tensors[gi] = nudged(t, i, -FD_STEP);
            let num = (loss_of(&plus, Some(adapters), batch) - loss_of(&minus, Some(adapters), batch))
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[i], num));
        }
        out.push((name.clone(), worst));
    }
    for (pi, pair) in adapters.pairs.iter().enumerate() {
        for (k, which) in [(0, "A"), (1, "B")] {
            let key = ADAPTER_KEY_BASE + 2 * pi + k;
            let g = grads.get(key).expect("adapter gradient");
            let t = if k == 0 { &pair.a } else { &pair.b };
            let mut worst: f64 = 0.0;
            for _ in 0..coords_per_group {
                let i = rng.random_range(0..t.numel());
                let mut plus = adapters.clone();
                let mut minus = adapters.clone();
                *plus.tensors_mut()[2 * pi + k] = nudged(t, i, FD_STEP);
                *minus.tensors_mut()[2 * pi + k] = nudged(t, i, -FD_STEP);
                let num = (loss_of(params, Some(&plus), batch) - loss_of(params, Some(&minus), batch))
                    / (2.0 * FD_STEP);
                worst = worst.max(rel_err(g.data()[i], num));
            }
            out.push((format!("lora.{}.{}.{which}", pair.layer, pair.target.name()), worst));
        }
    }
    out
}
