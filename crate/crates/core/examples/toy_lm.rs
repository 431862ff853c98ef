//! Train the byte-level transformer to memorise a few prompt/answer pairs,
//! decode greedily and round-trip a checkpoint.
//!
//! `cargo run --release --example toy_lm`

use fiat::numcore::{AdamConfig, OptimizerState};
use fiat::pipeline::steps::full_step;
use fiat::toylm::{
    greedy_decode_text, load_checkpoint, save_checkpoint, sequence_logprob, tokenizer, CheckpointKind, DecodeParams,
    ModelConfig, ModelParams, TrainSequence,
};

const PAIRS: [(&str, &str); 3] = [("colour of grass?", "green"), ("colour of sky?", "blue"), ("2+2?", "four")];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        max_seq_len: 64,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(cfg, CheckpointKind::RawPretrained, 7)?;
    println!("{} parameters", params.num_params());

    let batch: Vec<TrainSequence> = PAIRS
        .iter()
        .map(|(p, a)| TrainSequence::from_pair(p.as_bytes(), format!(" {a}").as_bytes()))
        .collect();
    let mut opt = OptimizerState::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() }, &params.tensors);
    for step in 0..=300 {
        let loss = full_step(&mut params, &mut opt, &batch, step)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {loss:.4}");
        }
    }

    let dp = DecodeParams::new(12);
    for (p, a) in PAIRS {
        let out = greedy_decode_text(&params, p, &dp)?;
        let lp = sequence_logprob(&params, &tokenizer::encode_prompt(p.as_bytes()), &tokenizer::encode_bytes(format!(" {a}").as_bytes()))?;
        println!("{p:<18} -> {:<8} log p(gold) = {lp:.3}", out.trim());
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("toy.ckpt");
    save_checkpoint(&path, &params)?;
    let back = load_checkpoint(&path)?;
    println!("checkpoint round trip identical: {}", back.bits() == params.bits());
    Ok(())
}
