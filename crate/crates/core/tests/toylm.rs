mod common;

use common::{random_adapters, random_batch, random_params, tiny_config};
use fiat::numcore::{adam_step, AdamConfig, GradTape, OptimizerState, Tensor};
use fiat::toylm::{
    forward_logits, greedy_decode, greedy_decode_text, sequence_logprob, sequence_loss, slot, tokenizer,
    BoundModel, CheckpointKind, DecodeParams, LmError, ModelConfig, ModelParams, Session, TrainSequence, BOS,
    EOS,
};

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..10 {
        let cfg = tiny_config();
        let params = random_params(cfg, seed, 0.5);
        let adapters = random_adapters(&params, 2, seed, 0.3);
        let batch = random_batch(&cfg, seed);
        for (group, err) in common::gradcheck(&params, &adapters, &batch, 3, seed) {
            assert!(err < 1e-4, "seed {seed}, {group}: relative error {err:e}");
        }
    }
}

#[test]
fn appending_a_suffix_leaves_earlier_logits_alone() {
    let p = random_params(tiny_config(), 4, 0.3);
    let short = [BOS, 10, 20, 30];
    let long = [BOS, 10, 20, 30, 40, 50, 60];
    let a = forward_logits(&p, &short).unwrap();
    let b = forward_logits(&p, &long).unwrap();
    let v = p.config.vocab_size;
    for r in 0..short.len() {
        for c in 0..v {
            assert!((a.data()[r * v + c] - b.data()[r * v + c]).abs() <= 1e-10);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::default();
    let tokens = tokenizer::tokenize(b"determinism");
    let a = forward_logits(&ModelParams::init(cfg, CheckpointKind::RawPretrained, 8).unwrap(), &tokens).unwrap();
    let b = forward_logits(&ModelParams::init(cfg, CheckpointKind::RawPretrained, 8).unwrap(), &tokens).unwrap();
    assert_eq!(a.bits(), b.bits());
}

#[test]
fn too_long_input_is_rejected() {
    let p = random_params(tiny_config(), 1, 0.1);
    let tokens = vec![1u32; 25];
    assert!(matches!(forward_logits(&p, &tokens), Err(LmError::SequenceTooLong { len: 25, max: 24 })));
    let prompt = vec![BOS; 20];
    assert!(matches!(
        greedy_decode(&p, &prompt, &DecodeParams::new(5)),
        Err(LmError::SequenceTooLong { .. })
    ));
}

/// Hand-set weights for a one-layer, one-head model with `d_model = 2`.
fn hand_model() -> ModelParams {
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 2,
        n_heads: 1,
        d_ff: 3,
        vocab_size: 259,
        max_seq_len: 4,
    };
    let mut p = ModelParams::init(cfg, CheckpointKind::RawPretrained, 0).unwrap();
    let set = |p: &mut ModelParams, i: usize, f: &dyn Fn(usize) -> f64| {
        let t = &p.tensors[i];
        let data = (0..t.numel()).map(f).collect();
        p.tensors[i] = Tensor::new(t.shape().to_vec(), data).unwrap();
    };
    set(&mut p, slot::TOK_EMB, &|i| ((i * 7 % 13) as f64 - 6.0) / 5.0);
    set(&mut p, slot::POS_EMB, &|i| (i as f64 - 3.0) / 4.0);
    set(&mut p, slot::ln1_gain(0), &|i| [1.5, 0.5][i]);
    set(&mut p, slot::ln1_bias(0), &|i| [0.1, -0.2][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::Q), &|i| [0.3, -0.4, 0.8, 0.1][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::K), &|i| [-0.6, 0.2, 0.5, 0.9][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::V), &|i| [1.0, 0.5, -0.5, 0.25][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::O), &|i| [0.7, 0.0, 0.2, -1.1][i]);
    set(&mut p, slot::ln2_gain(0), &|i| [0.9, 1.2][i]);
    set(&mut p, slot::ln2_bias(0), &|i| [0.0, 0.3][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::FfIn), &|i| [0.5, -1.0, 1.5, 0.2, -0.3, 0.8][i]);
    set(&mut p, slot::ff_in_bias(0), &|i| [0.1, 0.0, -0.1][i]);
    set(&mut p, slot::linear(0, fiat::toylm::Linear::FfOut), &|i| [0.4, -0.2, 0.6, 1.0, 0.3, -0.7][i]);
    set(&mut p, slot::ff_out_bias(0), &|i| [0.05, -0.05][i]);
    set(&mut p, slot::ln_f_gain(1), &|i| [1.1, 0.8][i]);
    set(&mut p, slot::ln_f_bias(1), &|i| [-0.1, 0.2][i]);
    set(&mut p, slot::head(1), &|i| ((i * 5 % 11) as f64 - 5.0) / 3.0);
    p
}

/// Straight-line reference forward pass written without any library code.
fn hand_forward(p: &ModelParams, tokens: &[u32]) -> Vec<Vec<f64>> {
    let t = |i: usize| p.tensors[i].data();
    let ln = |x: [f64; 2], g: &[f64], b: &[f64]| -> [f64; 2] {
        let mean = (x[0] + x[1]) / 2.0;
        let var = ((x[0] - mean).powi(2) + (x[1] - mean).powi(2)) / 2.0;
        let s = (var + 1e-5).sqrt();
        [(x[0] - mean) / s * g[0] + b[0], (x[1] - mean) / s * g[1] + b[1]]
    };
    // y = W x with W stored [out × in]
    let lin = |w: &[f64], x: &[f64], out: usize| -> Vec<f64> {
        let inp = x.len();
        (0..out).map(|o| (0..inp).map(|i| w[o * inp + i] * x[i]).sum()).collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh());
    let n = tokens.len();
    let mut xs: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let e = &t(slot::TOK_EMB)[tokens[i] as usize * 2..];
            let pe = &t(slot::POS_EMB)[i * 2..];
            [e[0] + pe[0], e[1] + pe[1]]
        })
        .collect();
    let h: Vec<[f64; 2]> = xs.iter().map(|&x| ln(x, t(slot::ln1_gain(0)), t(slot::ln1_bias(0)))).collect();
    use fiat::toylm::Linear::*;
    let q: Vec<Vec<f64>> = h.iter().map(|x| lin(t(slot::linear(0, Q)), x, 2)).collect();
    let k: Vec<Vec<f64>> = h.iter().map(|x| lin(t(slot::linear(0, K)), x, 2)).collect();
    let v: Vec<Vec<f64>> = h.iter().map(|x| lin(t(slot::linear(0, V)), x, 2)).collect();
    for i in 0..n {
        let scores: Vec<f64> = (0..=i)
            .map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt())
            .collect();
        let pr = softmax_row(&scores);
        let mut a = [0.0; 2];
        for j in 0..=i {
            a[0] += pr[j] * v[j][0];
            a[1] += pr[j] * v[j][1];
        }
        let o = lin(t(slot::linear(0, O)), &a, 2);
        xs[i][0] += o[0];
        xs[i][1] += o[1];
    }
    let mut out = Vec::new();
    for x in xs.iter_mut() {
        let h2 = ln(*x, t(slot::ln2_gain(0)), t(slot::ln2_bias(0)));
        let mut f = lin(t(slot::linear(0, FfIn)), &h2, 3);
        for (fi, b) in f.iter_mut().zip(t(slot::ff_in_bias(0))) {
            *fi = gelu(*fi + b);
        }
        let f = lin(t(slot::linear(0, FfOut)), &f, 2);
        x[0] += f[0] + t(slot::ff_out_bias(0))[0];
        x[1] += f[1] + t(slot::ff_out_bias(0))[1];
        let xf = ln(*x, t(slot::ln_f_gain(1)), t(slot::ln_f_bias(1)));
        out.push(lin(t(slot::head(1)), &xf, 259));
    }
    out
}

#[test]
fn forward_matches_hand_computation() {
    let p = hand_model();
    let tokens = [BOS, 104, 105, 33];
    let got = forward_logits(&p, &tokens).unwrap();
    let want = hand_forward(&p, &tokens);
    for (r, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            let g = got.data()[r * 259 + c];
            assert!((g - w).abs() <= 1e-9, "row {r} col {c}: {g} vs {w}");
        }
    }
}

#[test]
fn incremental_session_matches_full_forward() {
    let p = random_params(tiny_config(), 6, 0.4);
    let tokens = [BOS, 3, 1, 4, 1, 5, 9, 2, 6];
    let full = forward_logits(&p, &tokens).unwrap();
    let mut s = Session::new(&p);
    let mut got = s.feed(&tokens[..4], true).unwrap();
    for &t in &tokens[4..] {
        got.extend(s.feed(&[t], true).unwrap());
    }
    assert_eq!(s.len(), tokens.len());
    let bits: Vec<u64> = got.iter().map(|x| x.to_bits()).collect();
    assert_eq!(bits, full.bits());
}

#[test]
fn zero_new_tokens_decode_to_nothing() {
    let p = random_params(tiny_config(), 2, 0.4);
    let out = greedy_decode(&p, &tokenizer::encode_prompt(b"abc"), &DecodeParams::new(0)).unwrap();
    assert!(out.is_empty());
}

#[test]
fn eos_rigged_head_stops_immediately() {
    let mut p = random_params(tiny_config(), 2, 0.4);
    let n = p.config.n_layers;
    let d = p.config.d_model;
    p.tensors[slot::ln_f_gain(n)] = Tensor::zeros(&[d]);
    p.tensors[slot::ln_f_bias(n)] = Tensor::filled(&[d], 1.0);
    let mut head = vec![0.0; 259 * d];
    head[EOS as usize * d..(EOS as usize + 1) * d].fill(1.0);
    p.tensors[slot::head(n)] = Tensor::new(vec![259, d], head).unwrap();
    let out = greedy_decode_text(&p, "anything", &DecodeParams::new(10)).unwrap();
    assert_eq!(out, "");
}

#[test]
fn stop_sequence_is_trimmed() {
    // A model that always emits the same byte: head row for 'x' dominates.
    let mut p = random_params(tiny_config(), 2, 0.4);
    let n = p.config.n_layers;
    let d = p.config.d_model;
    p.tensors[slot::ln_f_gain(n)] = Tensor::zeros(&[d]);
    p.tensors[slot::ln_f_bias(n)] = Tensor::filled(&[d], 1.0);
    let mut head = vec![0.0; 259 * d];
    head[b'x' as usize * d..(b'x' as usize + 1) * d].fill(1.0);
    p.tensors[slot::head(n)] = Tensor::new(vec![259, d], head).unwrap();
    let dp = DecodeParams::new(6);
    assert_eq!(greedy_decode_text(&p, "a", &dp).unwrap(), "xxxxxx");
    assert_eq!(greedy_decode_text(&p, "a", &dp.clone().with_stop("xxx")).unwrap(), "");
}

#[test]
fn memorises_a_tiny_training_set() {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        vocab_size: 259,
        max_seq_len: 32,
    };
    let mut p = ModelParams::init(cfg, CheckpointKind::RawPretrained, 11).unwrap();
    let pairs: [(&str, &str); 3] = [("red?", "apple"), ("sky?", "blue"), ("sum 2+2?", "four")];
    let batch: Vec<TrainSequence> = pairs
        .iter()
        .map(|(x, y)| TrainSequence::from_pair(x.as_bytes(), y.as_bytes()))
        .collect();
    let mut opt = OptimizerState::new(
        AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        &p.tensors,
    );
    let mut loss = f64::INFINITY;
    for _ in 0..1000 {
        let mut tape = GradTape::new();
        let m = BoundModel::bind(&mut tape, &p, true);
        let l = sequence_loss(&mut tape, &m, &batch).unwrap();
        loss = tape.value(l).unwrap().item().unwrap();
        if loss < 0.01 {
            break;
        }
        let g = tape.backward(l).unwrap();
        let grads: Vec<Tensor> = (0..p.tensors.len()).map(|i| g.get(i).cloned().unwrap()).collect();
        p.tensors = adam_step(&mut opt, &p.tensors, &grads).unwrap();
    }
    assert!(loss < 0.01, "final loss {loss}");
    for (x, y) in pairs {
        assert_eq!(greedy_decode_text(&p, x, &DecodeParams::new(8)).unwrap(), y);
    }
}

#[test]
fn logprob_of_empty_continuation_is_zero() {
    let p = random_params(tiny_config(), 3, 0.4);
    assert_eq!(sequence_logprob(&p, &[BOS, 1, 2], &[]).unwrap(), 0.0);
}

#[test]
fn logprob_matches_per_step_probabilities() {
    for seed in 0..5 {
        let p = random_params(tiny_config(), seed, 0.4);
        let prompt = tokenizer::encode_prompt(b"q:");
        let cont = tokenizer::encode_bytes(b"yes");
        let lp = sequence_logprob(&p, &prompt, &cont).unwrap();
        assert!(lp <= 0.0);
        let mut product = 1.0;
        let mut ctx = prompt.clone();
        for &t in &cont {
            let logits = forward_logits(&p, &ctx).unwrap();
            let v = p.config.vocab_size;
            let last = &logits.data()[(ctx.len() - 1) * v..ctx.len() * v];
            product *= softmax_row(last)[t as usize];
            ctx.push(t);
        }
        assert!((lp.exp() - product).abs() <= 1e-10, "{} vs {product}", lp.exp());
    }
}

#[test]
fn best_single_token_score_agrees_with_greedy_choice() {
    for seed in 0..5 {
        let p = random_params(tiny_config(), seed, 0.6);
        let prompt = tokenizer::encode_prompt(format!("p{seed}").as_bytes());
        let scores: Vec<f64> = (0..259u32)
            .map(|t| sequence_logprob(&p, &prompt, &[t]).unwrap())
            .collect();
        let out = greedy_decode(&p, &prompt, &DecodeParams::new(1)).unwrap();
        for t in 0..256u32 {
            let is_best = scores.iter().all(|&s| scores[t as usize] >= s);
            assert_eq!(is_best, out.first() == Some(&(t as u8)), "seed {seed}, token {t}");
        }
    }
}
