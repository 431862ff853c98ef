//! The built-in leak task and oracle augmentation: labels are only
//! recoverable from the rationale the oracle writes.
//!
//! `cargo run --example synthetic_task`

use fiat::evalkit::Split;
use fiat::pipeline::synthetic::{instruction_pair, leak_dataset};
use fiat::pipeline::{augment, Oracles, RunConfig};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = leak_dataset(Split::Train, 8, 1);
    println!("{} examples, languages {:?}", train.len(), train.language_counts());

    let run = RunConfig::default();
    let oracles = Oracles::from_config(&run, &train.examples, None)?;
    let aug = augment(&train, &run.reasoning, &oracles.reasoning)?;
    for ex in &train.examples {
        println!("{:<28} gold {:<3} rationale {:?}", ex.input_text(), ex.target, aug.text(&ex.id)?);
    }
    println!("{} oracle calls", oracles.backend_calls());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    println!("\ninstruction-pretraining samples:");
    for _ in 0..4 {
        let (prompt, answer) = instruction_pair(&mut rng);
        println!("{prompt:?} -> {answer:?}");
    }
    Ok(())
}
