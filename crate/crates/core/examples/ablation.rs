//! The cumulative ablation: each row removes one more ingredient, ending
//! at plain fine-tuning.
//!
//! `cargo run --release --example ablation`

use std::path::PathBuf;

use fiat::evalkit::{table_csv, Split};
use fiat::pipeline::{Experiment, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/fiat-examples-cache");
    let exp = Experiment::new(RunConfig::from_json(include_str!("demo_run.json"), &[])?, &cache)?;
    let bases = exp.bases()?;
    let aug = exp.augment_all()?;

    let rows = exp.ablation(&bases, &aug, Split::Validation)?;
    for row in &rows {
        let v = row.run.variant;
        println!(
            "{:<34} cot={:<5} instr={:<5} peft={:<5} base={:<22} {:5.1}",
            row.name,
            v.use_cot,
            v.use_instructions,
            v.use_peft,
            format!("{:?}", v.base_checkpoint),
            row.report.primary()
        );
    }
    let reports: Vec<_> = rows.into_iter().map(|r| r.report).collect();
    println!();
    for line in table_csv(&reports).lines().filter(|l| l.starts_with("variant") || l.contains(",macro,")) {
        println!("{line}");
    }
    Ok(())
}
