//! Low-rank adapters: zero-init identity, training only the adapters,
//! merging, and the adapter file format.
//!
//! `cargo run --release --example lora`

use fiat::numcore::{AdamConfig, OptimizerState};
use fiat::peft::{adapted_forward, init_adapters, merge, read_adapters, write_adapters, AdapterConfig};
use fiat::pipeline::steps::adapter_step;
use fiat::toylm::{forward_logits, tokenizer, CheckpointKind, ModelConfig, ModelParams, TrainSequence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = ModelParams::init(ModelConfig::default(), CheckpointKind::InstructionPretrained, 3)?;
    let cfg = AdapterConfig::default();
    let mut adapters = init_adapters(&base, &cfg, 3)?;
    println!(
        "rank {} on {:?}: {} trainable of {} ({:.2}%)",
        cfg.rank,
        cfg.targets,
        adapters.num_trainable(),
        base.num_params(),
        100.0 * adapters.trainable_fraction(&base)
    );

    let probe = tokenizer::encode_prompt(b"Input: abc\nAnswer:");
    let same = adapted_forward(&base, &adapters, &probe)?.bits() == forward_logits(&base, &probe)?.bits();
    println!("zero-init adapters leave logits bit-identical: {same}");

    let batch = vec![
        TrainSequence::from_pair(b"Input: abc\nAnswer:", b" yes"),
        TrainSequence::from_pair(b"Input: xyz\nAnswer:", b" no"),
    ];
    let before = base.bits();
    let mut opt = OptimizerState::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, adapters.tensors());
    for step in 0..30 {
        let loss = adapter_step(&base, &mut adapters, &mut opt, &batch, step)?;
        if step % 10 == 0 {
            println!("step {step:>2}  loss {loss:.4}");
        }
    }
    println!("base weights untouched: {}", base.bits() == before);

    let merged = merge(&base, &adapters)?;
    let diff = adapted_forward(&base, &adapters, &probe)?.max_abs_diff(&forward_logits(&merged, &probe)?);
    println!("merged vs adapted forward, max |Δlogit| = {diff:.2e}");

    let mut buf = Vec::new();
    write_adapters(&mut buf, &adapters)?;
    println!("adapter file: {} bytes, round trip equal: {}", buf.len(), read_adapters(buf.as_slice())? == adapters);
    Ok(())
}
