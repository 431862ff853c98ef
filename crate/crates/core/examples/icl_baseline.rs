//! The in-context baseline: exemplars with rationales are packed into one
//! oracle prompt per example.
//!
//! `cargo run --example icl_baseline`

use std::path::PathBuf;

use fiat::evalkit::Split;
use fiat::pipeline::{icl_instruction_set, Experiment, RunConfig, ICL_MAX_PROMPT_BYTES};
use fiat::prompting::render_reasoning_prompt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/fiat-examples-cache");
    let exp = Experiment::new(RunConfig::from_json(include_str!("demo_run.json"), &[])?, &cache)?;
    let aug = exp.augment_all()?;

    let iset = icl_instruction_set(&exp.run.icl, &exp.data.train, Some(&aug));
    let ex = &exp.data.dev.examples[0];
    let prompt = render_reasoning_prompt(&iset, &ex.input_text())?;
    println!(
        "{} exemplars, prompt {} bytes (limit {ICL_MAX_PROMPT_BYTES})\n--- prompt tail ---\n{}",
        iset.exemplars.len(),
        prompt.text.len(),
        &prompt.text[prompt.text.len().saturating_sub(300)..]
    );

    let report = exp.icl(Split::Validation, &aug)?;
    println!("\nICL dev {} {:.1}", report.primary_metric, report.primary());
    Ok(())
}
