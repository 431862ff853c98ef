//! Metrics and reports: accuracy, AUC-PR, span F1, per-language reports,
//! the CSV table and the CoT gain table.
//!
//! `cargo run --example metrics`

use std::collections::BTreeSet;

use fiat::evalkit::{
    accuracy, auc_pr, cot_gain_csv, cot_gain_table, make_report, span_f1, table_csv, ExampleResult, ReportOptions,
    TaskKind, ACCURACY,
};

fn result(id: &str, lang: &str, pred: &str, gold: &str, score: f64) -> ExampleResult {
    ExampleResult {
        id: id.into(),
        language: lang.into(),
        prediction: pred.into(),
        gold: gold.into(),
        score: Some(score),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("accuracy     {:.3}", accuracy(&["Yes", "no", "yes"], &["yes", "no", "no"])?);
    let ids = ["a", "b", "c", "d"];
    println!("AUC-PR       {:.3}", auc_pr(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false], &ids)?);
    println!("span F1      {:.3}", span_f1("the Eiffel Tower", "Eiffel tower in Paris"));

    let langs: BTreeSet<String> = ["fi", "te"].iter().map(|s| s.to_string()).collect();
    let opts = ReportOptions::default();
    let with_cot = make_report(
        "with-cot",
        TaskKind::Attribution,
        &[
            result("1", "fi", "yes", "yes", 0.9),
            result("2", "fi", "no", "no", 0.2),
            result("3", "te", "yes", "yes", 0.7),
            result("4", "te", "no", "yes", 0.4),
        ],
        &langs,
        &opts,
    )?;
    let without_cot = make_report(
        "without-cot",
        TaskKind::Attribution,
        &[
            result("1", "fi", "yes", "yes", 0.6),
            result("2", "fi", "yes", "no", 0.6),
            result("3", "te", "no", "yes", 0.4),
            result("4", "te", "no", "yes", 0.3),
        ],
        &langs,
        &opts,
    )?;
    print!("\n{}", table_csv(&[with_cot.clone(), without_cot.clone()]));
    print!("\n{}", cot_gain_csv(&cot_gain_table(&with_cot, &without_cot, ACCURACY)));
    Ok(())
}
