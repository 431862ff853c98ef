use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc_pr, normalize_label, span_f1};
use super::{EvalError, TaskKind};

pub const ACCURACY: &str = "accuracy";
pub const AUC_PR: &str = "auc_pr";
pub const F1: &str = "f1";
/// Language column value for aggregate rows in CSV output.
pub const MACRO: &str = "macro";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub id: String,
    pub language: String,
    pub prediction: String,
    pub gold: String,
    /// Positive-class score, when the predictor exposes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Languages in the macro average; all scored languages when absent.
    pub macro_languages: Option<Vec<String>>,
    /// Primary-metric values of baselines, in points.
    pub baselines: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub baseline: String,
    pub baseline_value: f64,
    pub value: f64,
}

impl Gain {
    /// Difference to the strongest baseline; the first name wins a tie.
    pub fn over(value: f64, baselines: &BTreeMap<String, f64>) -> Option<Gain> {
        let mut best: Option<(&String, f64)> = None;
        for (name, &v) in baselines {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((name, v));
            }
        }
        best.map(|(name, b)| Gain {
            baseline: name.clone(),
            baseline_value: b,
            value: value - b,
        })
    }
}

/// Metric values are in points (0 to 100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub task: TaskKind,
    pub primary_metric: String,
    pub per_language: BTreeMap<String, BTreeMap<String, f64>>,
    pub macro_languages: Vec<String>,
    pub macro_average: BTreeMap<String, f64>,
    pub gain: Option<Gain>,
    pub n_examples: usize,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn primary(&self) -> f64 {
        self.macro_average[&self.primary_metric]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }
}

fn language_metrics(task: TaskKind, rows: &[&ExampleResult]) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut m = BTreeMap::new();
    let preds: Vec<&str> = rows.iter().map(|r| r.prediction.as_str()).collect();
    let golds: Vec<&str> = rows.iter().map(|r| r.gold.as_str()).collect();
    match task {
        TaskKind::Attribution => {
            m.insert(ACCURACY.to_string(), 100.0 * accuracy(&preds, &golds)?);
            if let Some(scores) = rows.iter().map(|r| r.score).collect::<Option<Vec<f64>>>() {
                let pos: Vec<bool> = golds.iter().map(|g| normalize_label(g) == "yes").collect();
                let ids: Vec<&str> = rows.iter().map(|r| r.id.as_str()).collect();
                match auc_pr(&scores, &pos, &ids) {
                    Ok(ap) => {
                        m.insert(AUC_PR.to_string(), 100.0 * ap);
                    }
                    Err(EvalError::NoPositives) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        TaskKind::SpanQa => {
            let sum: f64 = preds.iter().zip(&golds).map(|(p, g)| span_f1(p, g)).sum();
            m.insert(F1.to_string(), 100.0 * sum / rows.len() as f64);
        }
    }
    Ok(m)
}

/// Per-language metrics, their unweighted mean over the macro languages,
/// and the gain over the best baseline.
pub fn make_report(
    variant: &str,
    task: TaskKind,
    results: &[ExampleResult],
    known_languages: &BTreeSet<String>,
    opts: &ReportOptions,
) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_lang: BTreeMap<&str, Vec<&ExampleResult>> = BTreeMap::new();
    for r in results {
        if !known_languages.contains(&r.language) {
            return Err(EvalError::UnknownLanguage(r.language.clone()));
        }
        by_lang.entry(&r.language).or_default().push(r);
    }
    let mut per_language = BTreeMap::new();
    for (lang, rows) in &by_lang {
        per_language.insert(lang.to_string(), language_metrics(task, rows)?);
    }
    let macro_languages: Vec<String> = match &opts.macro_languages {
        Some(list) => {
            if let Some(bad) = list.iter().find(|l| !known_languages.contains(*l)) {
                return Err(EvalError::UnknownLanguage(bad.clone()));
            }
            list.iter().filter(|l| per_language.contains_key(*l)).cloned().collect()
        }
        None => per_language.keys().cloned().collect(),
    };
    if macro_languages.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut macro_average = BTreeMap::new();
    let metric_names: BTreeSet<&String> = per_language.values().flat_map(|m| m.keys()).collect();
    for name in metric_names {
        let vals: Vec<f64> = macro_languages
            .iter()
            .filter_map(|l| per_language[l].get(name).copied())
            .collect();
        if !vals.is_empty() {
            macro_average.insert(name.clone(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let primary_metric = match task {
        TaskKind::Attribution => ACCURACY,
        TaskKind::SpanQa => F1,
    }
    .to_string();
    let gain = Gain::over(macro_average[&primary_metric], &opts.baselines);
    let mut metadata = BTreeMap::new();
    metadata.insert("units".to_string(), "points".to_string());
    if task == TaskKind::Attribution {
        metadata.insert(
            "auc_pr_aggregation".to_string(),
            "computed per language, then macro-averaged".to_string(),
        );
        metadata.insert(
            "auc_pr_score".to_string(),
            "P(yes) normalised over the yes/no label scores".to_string(),
        );
    }
    Ok(EvalReport {
        variant: variant.to_string(),
        task,
        primary_metric,
        per_language,
        macro_languages,
        macro_average,
        gain,
        n_examples: results.len(),
        metadata,
    })
}

fn write_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Long-format table with columns `variant, language, metric, value`.
pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut rows = Vec::new();
    for r in reports {
        for (lang, metrics) in &r.per_language {
            for (m, v) in metrics {
                rows.push(vec![r.variant.clone(), lang.clone(), m.clone(), v.to_string()]);
            }
        }
        for (m, v) in &r.macro_average {
            rows.push(vec![r.variant.clone(), MACRO.to_string(), m.clone(), v.to_string()]);
        }
        if let Some(g) = &r.gain {
            rows.push(vec![
                r.variant.clone(),
                MACRO.to_string(),
                format!("gain_vs_{}", g.baseline),
                g.value.to_string(),
            ]);
        }
    }
    write_csv(&["variant", "language", "metric", "value"], rows)
}

/// Per-language metric without CoT and the change CoT brings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotGainRow {
    pub language: String,
    pub baseline: f64,
    pub delta: f64,
}

pub fn cot_gain_table(with_cot: &EvalReport, without_cot: &EvalReport, metric: &str) -> Vec<CotGainRow> {
    without_cot
        .per_language
        .iter()
        .filter_map(|(lang, m)| {
            let base = *m.get(metric)?;
            let with = *with_cot.per_language.get(lang)?.get(metric)?;
            Some(CotGainRow {
                language: lang.clone(),
                baseline: base,
                delta: with - base,
            })
        })
        .collect()
}

pub fn cot_gain_csv(rows: &[CotGainRow]) -> String {
    write_csv(
        &["language", "baseline", "cot_delta"],
        rows.iter()
            .map(|r| vec![r.language.clone(), r.baseline.to_string(), r.delta.to_string()])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(id: &str, lang: &str, pred: &str, gold: &str, score: f64) -> ExampleResult {
        ExampleResult {
            id: id.into(),
            language: lang.into(),
            prediction: pred.into(),
            gold: gold.into(),
            score: Some(score),
        }
    }

    fn langs(ls: &[&str]) -> BTreeSet<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn gain_is_against_the_best_baseline() {
        let baselines = BTreeMap::from([("ICL".to_string(), 68.9), ("fine-tune".to_string(), 67.1)]);
        let g = Gain::over(77.3, &baselines).unwrap();
        assert_eq!(g.baseline, "ICL");
        assert!((g.value - 8.4).abs() < 1e-9);
        assert!(Gain::over(1.0, &BTreeMap::new()).is_none());
    }

    #[test]
    fn single_language_macro_equals_language() {
        let rs = vec![res("a", "fi", "yes", "yes", 0.9), res("b", "fi", "yes", "no", 0.8)];
        let r = make_report("v", TaskKind::Attribution, &rs, &langs(&["fi"]), &ReportOptions::default()).unwrap();
        assert_eq!(r.macro_average, r.per_language["fi"]);
        assert_eq!(r.primary(), 50.0);
        assert_eq!(r.per_language["fi"][AUC_PR], 100.0);
    }

    #[test]
    fn macro_is_unweighted_over_declared_languages() {
        let rs = vec![
            res("a", "fi", "yes", "yes", 0.9),
            res("b", "ja", "no", "yes", 0.1),
            res("c", "ja", "no", "no", 0.1),
            res("d", "ru", "no", "yes", 0.1),
        ];
        let opts = ReportOptions {
            macro_languages: Some(vec!["fi".into(), "ja".into()]),
            ..Default::default()
        };
        let r = make_report("v", TaskKind::Attribution, &rs, &langs(&["fi", "ja", "ru"]), &opts).unwrap();
        assert_eq!(r.primary(), 75.0);
        assert_eq!(r.macro_languages, vec!["fi", "ja"]);
    }

    #[test]
    fn unknown_language_is_an_error() {
        let rs = vec![res("a", "xx", "yes", "yes", 0.5)];
        assert!(matches!(
            make_report("v", TaskKind::Attribution, &rs, &langs(&["fi"]), &ReportOptions::default()),
            Err(EvalError::UnknownLanguage(l)) if l == "xx"
        ));
    }

    #[test]
    fn report_json_round_trip() {
        let rs = vec![res("a", "fi", "yes", "yes", 0.3), res("b", "te", "no", "yes", 0.7)];
        let opts = ReportOptions {
            baselines: BTreeMap::from([("ICL".to_string(), 1.0 / 3.0)]),
            ..Default::default()
        };
        let r = make_report("w/o CoT", TaskKind::Attribution, &rs, &langs(&["fi", "te"]), &opts).unwrap();
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        let csv = table_csv(&[r]);
        assert!(csv.starts_with("variant,language,metric,value\n"));
        assert!(csv.contains("w/o CoT,macro,gain_vs_ICL,"));
    }

    #[test]
    fn cot_gain_rows() {
        let a = vec![res("a", "fi", "x", "x y", 0.0), res("b", "te", "z", "z", 0.0)];
        let b = vec![res("a", "fi", "x y", "x y", 0.0), res("b", "te", "z", "z", 0.0)];
        let l = langs(&["fi", "te"]);
        let without = make_report("a", TaskKind::SpanQa, &a, &l, &ReportOptions::default()).unwrap();
        let with = make_report("b", TaskKind::SpanQa, &b, &l, &ReportOptions::default()).unwrap();
        let rows = cot_gain_table(&with, &without, F1);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].baseline - 200.0 / 3.0).abs() < 1e-9);
        assert!((rows[0].delta - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(rows[1].delta, 0.0);
        assert!(cot_gain_csv(&rows).starts_with("language,baseline,cot_delta\n"));
    }
}
