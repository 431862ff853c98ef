//! Build a FIAT model and a plain fine-tuned model on the leak task,
//! compare them on the dev split, then run two-stage inference.
//!
//! `cargo run --release --example fiat_build` (small demo config)
//! `cargo run --release --example fiat_build -- --full` (default config, minutes)

use std::path::PathBuf;

use fiat::evalkit::Split;
use fiat::pipeline::{infer, Experiment, RunConfig, Variant};

fn config() -> Result<RunConfig, Box<dyn std::error::Error>> {
    Ok(if std::env::args().any(|a| a == "--full") {
        RunConfig::default()
    } else {
        RunConfig::from_json(include_str!("demo_run.json"), &[])?
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/fiat-examples-cache");
    let exp = Experiment::new(config()?, &cache)?;
    let bases = exp.bases()?;
    let aug = exp.augment_all()?;

    for variant in [Variant::FIAT, Variant::FINE_TUNE] {
        let art = exp.build(variant, &bases, &aug)?;
        let report = exp.evaluate(&variant.label(), &art, Split::Validation, &aug)?;
        println!(
            "{:<10} dev {} {:5.1}  (best step {} of {})",
            variant.label(),
            report.primary_metric,
            report.primary(),
            art.best_step,
            art.steps_run
        );
        if variant.is_fiat() {
            for ex in exp.data.dev.examples.iter().take(4) {
                let answer = infer(&art, &exp.run.reasoning, Some(&exp.oracles.reasoning), ex)?;
                println!("  {:<28} gold {:<3} -> {answer}", ex.input_text(), ex.target);
            }
        }
    }
    Ok(())
}
