use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Is the candidate answer supported by the passage? Targets are
    /// `yes`/`no`.
    Attribution,
    /// Extract an answer span, or `No answer`.
    SpanQa,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Attribution => "attribution",
            TaskKind::SpanQa => "span-qa",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub language: String,
    pub question: String,
    pub passage: String,
    /// Candidate answer, attribution only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// `yes`/`no`, an answer string, or `No answer`.
    pub target: String,
}

impl Example {
    /// The model-facing input `x`, one line per task.
    pub fn input_text(&self) -> String {
        match &self.answer {
            Some(a) => format!("{} | {} | {}", self.question, a, self.passage),
            None => format!("{} | {}", self.question, self.passage),
        }
    }

    pub fn kind(&self) -> TaskKind {
        if self.answer.is_some() {
            TaskKind::Attribution
        } else {
            TaskKind::SpanQa
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributionRow {
    id: String,
    language: String,
    question: String,
    answer: String,
    passage: String,
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanRow {
    id: String,
    language: String,
    question: String,
    passage: String,
    target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub kind: TaskKind,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, kind: TaskKind, examples: Vec<Example>) -> Self {
        Self {
            name: name.into(),
            split,
            kind,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn language_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.examples {
            *out.entry(e.language.clone()).or_insert(0) += 1;
        }
        out
    }

    /// One JSON object per line in the schema of `kind`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            let v = match &e.answer {
                Some(a) => serde_json::json!({
                    "id": e.id, "language": e.language, "question": e.question,
                    "answer": a, "passage": e.passage, "label": e.target,
                }),
                None => serde_json::json!({
                    "id": e.id, "language": e.language, "question": e.question,
                    "passage": e.passage, "target": e.target,
                }),
            };
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

fn row_to_example(kind: TaskKind, line: &str) -> Result<Example, String> {
    let ex = match kind {
        TaskKind::Attribution => {
            let r: AttributionRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let label = r.label.trim().to_lowercase();
            if label != "yes" && label != "no" {
                return Err(format!("label must be yes or no, got {:?}", r.label));
            }
            Example {
                id: r.id,
                language: r.language,
                question: r.question,
                passage: r.passage,
                answer: Some(r.answer),
                target: label,
            }
        }
        TaskKind::SpanQa => {
            let r: SpanRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Example {
                id: r.id,
                language: r.language,
                question: r.question,
                passage: r.passage,
                answer: None,
                target: r.target,
            }
        }
    };
    if ex.id.is_empty() {
        return Err("empty id".into());
    }
    if ex.language.trim().is_empty() {
        return Err("empty language".into());
    }
    Ok(ex)
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_jsonl(text: &str, name: &str, kind: TaskKind, split: Split) -> Result<Dataset, EvalError> {
    let mut seen = HashSet::new();
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex = row_to_example(kind, line).map_err(|message| EvalError::SchemaViolation {
            line: i + 1,
            message,
        })?;
        if !seen.insert(ex.id.clone()) {
            return Err(EvalError::DuplicateId { id: ex.id, line: i + 1 });
        }
        examples.push(ex);
    }
    let ds = Dataset::new(name, split, kind, examples);
    log::info!("loaded {name} ({split}): {} examples {:?}", ds.len(), ds.language_counts());
    Ok(ds)
}

/// Loads a dataset file; its name is the file stem.
pub fn load_jsonl(path: &Path, kind: TaskKind, split: Split) -> Result<Dataset, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_jsonl(&text, &name, kind, split)
}

/// Expected per-language sizes of each split of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskKind,
    pub splits: BTreeMap<Split, BTreeMap<String, usize>>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn languages(&self) -> std::collections::BTreeSet<String> {
        self.splits.values().flat_map(|m| m.keys().cloned()).collect()
    }

    pub fn total(&self, split: Split) -> usize {
        self.splits.get(&split).map(|m| m.values().sum()).unwrap_or(0)
    }

    /// Checks a loaded split against the expected counts.
    pub fn check(&self, ds: &Dataset) -> Result<(), EvalError> {
        let expected = self
            .splits
            .get(&ds.split)
            .ok_or_else(|| EvalError::Manifest(format!("no {} split in {}", ds.split, self.name)))?;
        let actual = ds.language_counts();
        if &actual != expected {
            return Err(EvalError::Manifest(format!(
                "{} {}: expected {expected:?}, found {actual:?}",
                self.name, ds.split
            )));
        }
        Ok(())
    }

    /// Like [`DatasetManifest::check`] for a file holding only some of the
    /// languages; returns how many were checked.
    pub fn check_subset(&self, ds: &Dataset) -> Result<usize, EvalError> {
        let expected = self
            .splits
            .get(&ds.split)
            .ok_or_else(|| EvalError::Manifest(format!("no {} split in {}", ds.split, self.name)))?;
        let actual = ds.language_counts();
        for (lang, n) in &actual {
            match expected.get(lang) {
                Some(e) if e == n => {}
                Some(e) => {
                    return Err(EvalError::Manifest(format!("{lang}: expected {e}, found {n}")));
                }
                None => return Err(EvalError::UnknownLanguage(lang.clone())),
            }
        }
        Ok(actual.len())
    }
}
