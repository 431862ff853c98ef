//! Distilled CoT: the small model learns to write the rationale itself, so
//! inference needs no oracle.
//!
//! `cargo run --release --example distilled_cot`

use std::path::PathBuf;

use fiat::evalkit::Split;
use fiat::pipeline::{distilled_rows, infer, Experiment, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/fiat-examples-cache");
    let exp = Experiment::new(RunConfig::from_json(include_str!("demo_run.json"), &[])?, &cache)?;
    let bases = exp.bases()?;
    let aug = exp.augment_all()?;

    let rows = distilled_rows(&exp.run, &exp.data.train, &aug)?;
    println!("{} training rows from {} examples", rows.len(), exp.data.train.len());

    let art = exp.build_distilled(&bases, &aug)?;
    let report = exp.evaluate("distilled", &art, Split::Validation, &aug)?;
    println!("distilled dev {} {:.1}", report.primary_metric, report.primary());

    let before = exp.oracles.backend_calls();
    for ex in exp.data.dev.examples.iter().take(4) {
        println!("  {:<28} gold {:<3} -> {}", ex.input_text(), ex.target, infer(&art, &exp.run.reasoning, None, ex)?);
    }
    println!("oracle calls during inference: {}", exp.oracles.backend_calls() - before);
    Ok(())
}
