//! Rationale generation: one oracle call per example under I_β.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evalkit::Dataset;
use crate::oracle::{default_oracle_decode, Oracle};
use crate::prompting::{render_reasoning_prompt, ANSWER_LABEL, INPUT_LABEL, RATIONALE_LABEL, REASONING_LABEL};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub example_id: String,
    /// Id of the reasoning instruction set that produced it.
    pub reasoning_id: String,
    pub backend: String,
    pub text: String,
    /// Runtime information only; kept out of the augmentation file so a
    /// warm-cache rerun writes the same bytes.
    #[serde(skip)]
    pub cache_hit: bool,
}

/// Rationales keyed by example id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    rationales: BTreeMap<String, Rationale>,
}

impl Augmentation {
    pub fn len(&self) -> usize {
        self.rationales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rationales.is_empty()
    }

    pub fn get(&self, example_id: &str) -> Option<&Rationale> {
        self.rationales.get(example_id)
    }

    pub fn text(&self, example_id: &str) -> Result<&str, PipelineError> {
        self.get(example_id)
            .map(|r| r.text.as_str())
            .ok_or_else(|| PipelineError::MissingAugmentation {
                example_id: example_id.to_string(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rationale> {
        self.rationales.values()
    }

    pub fn cache_hits(&self) -> usize {
        self.iter().filter(|r| r.cache_hit).count()
    }

    /// Adds a rationale. A second one for the same example, backend and
    /// reasoning set replaces the first.
    pub fn insert(&mut self, r: Rationale) {
        self.rationales.insert(r.example_id.clone(), r);
    }

    pub fn extend(&mut self, other: Augmentation) {
        for r in other.rationales.into_values() {
            self.insert(r);
        }
    }

    /// One JSON object per line, ordered by example id.
    pub fn to_jsonl(&self) -> String {
        self.iter()
            .map(|r| serde_json::to_string(r).expect("rationale serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, PipelineError> {
        let mut out = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            out.insert(serde_json::from_str(line)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Makes oracle output safe to embed as a rationale field: a single line
/// that does not open with a scaffold label.
pub fn clean_rationale(text: &str) -> String {
    let mut s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    while let Some(label) = [INPUT_LABEL, REASONING_LABEL, RATIONALE_LABEL, ANSWER_LABEL]
        .into_iter()
        .find(|l| s.starts_with(l))
    {
        s = s[label.len()..].trim_start().to_string();
    }
    s
}

/// Asks the oracle for a rationale for every example of `dataset`.
pub fn augment(
    dataset: &Dataset,
    reasoning: &crate::prompting::InstructionSet,
    oracle: &Oracle,
) -> Result<Augmentation, PipelineError> {
    let prompts = dataset
        .examples
        .iter()
        .map(|e| render_reasoning_prompt(reasoning, &e.input_text()).map(|p| p.text))
        .collect::<Result<Vec<_>, _>>()?;
    let responses = oracle.batch_generate(&prompts, &default_oracle_decode());
    let mut out = Augmentation::default();
    for (ex, resp) in dataset.examples.iter().zip(responses) {
        let resp = resp.map_err(|e| PipelineError::Oracle {
            example_id: ex.id.clone(),
            error: e.error,
        })?;
        out.insert(Rationale {
            example_id: ex.id.clone(),
            reasoning_id: reasoning.id.clone(),
            backend: resp.backend,
            text: clean_rationale(&resp.text),
            cache_hit: resp.cache_hit,
        });
    }
    log::info!(
        "augmented {} ({}): {} rationales, {} from cache",
        dataset.name,
        dataset.split,
        out.len(),
        out.cache_hits()
    );
    Ok(out)
}
