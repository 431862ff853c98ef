//! Datasets for the two task shapes, metrics, and per-language reports.

mod dataset;
mod metrics;
mod report;

pub use dataset::{load_jsonl, parse_jsonl, Dataset, DatasetManifest, Example, Split, TaskKind};
pub use metrics::{accuracy, auc_pr, normalize_answer, normalize_label, span_f1, NO_ANSWER};
pub use report::{
    cot_gain_csv, cot_gain_table, make_report, table_csv, CotGainRow, EvalReport, ExampleResult, Gain,
    ReportOptions, ACCURACY, AUC_PR, F1, MACRO,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("{expected} golds but {actual} predictions")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("no examples to score")]
    Empty,
    #[error("average precision needs at least one positive")]
    NoPositives,
    #[error("score {0} is not finite")]
    InvalidScore(f64),
    #[error("language {0:?} is not in the dataset manifest")]
    UnknownLanguage(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
