//! Instruction sets and the text layouts fed to the oracle and to the
//! tunable model.
//!
//! Reasoning prompt:
//!
//! ```text
//! {instruction}
//!
//! Input: {exemplar input}
//! Reasoning: {exemplar rationale}
//! Answer: {exemplar output}
//!
//! Input: {x}
//! Reasoning:
//! ```
//!
//! Tuning input: `{instruction}\n\nInput: {x}[\nRationale: {r}]\nAnswer:`.
//! An empty instruction drops the instruction block and its blank line.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const INPUT_LABEL: &str = "Input:";
pub const REASONING_LABEL: &str = "Reasoning:";
pub const RATIONALE_LABEL: &str = "Rationale:";
pub const ANSWER_LABEL: &str = "Answer:";
const SCAFFOLD_LABELS: [&str; 4] = [INPUT_LABEL, REASONING_LABEL, RATIONALE_LABEL, ANSWER_LABEL];
const BLOCK_SEP: &str = "\n\n";

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("instruction set {id} has role {actual}, expected {expected}")]
    RoleMismatch { id: String, expected: Role, actual: Role },
    #[error("{field} cannot be rendered unambiguously: {reason}")]
    AmbiguousField { field: String, reason: String },
    #[error("invalid instruction set: {0}")]
    InvalidSet(String),
    #[error("instruction set file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Prompts the oracle for a rationale.
    Reasoning,
    /// Frames the tunable model's input.
    Tuning,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Reasoning => "reasoning",
            Role::Tuning => "tuning",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    #[serde(default)]
    pub rationale: String,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub id: String,
    pub role: Role,
    pub instruction: String,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
}

impl InstructionSet {
    pub fn new(id: impl Into<String>, role: Role, instruction: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            role,
            instruction: instruction.into(),
            exemplars: Vec::new(),
        }
    }

    pub fn with_exemplars(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.exemplars = exemplars;
        self
    }

    /// Checks exemplar outputs and that every field renders unambiguously.
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.id.is_empty() {
            return Err(RenderError::InvalidSet("empty id".into()));
        }
        check_field("instruction", &self.instruction)?;
        for (i, e) in self.exemplars.iter().enumerate() {
            if e.output.trim().is_empty() {
                return Err(RenderError::InvalidSet(format!("exemplar {i} has an empty output")));
            }
            check_field(&format!("exemplar {i} input"), &e.input)?;
            check_field(&format!("exemplar {i} rationale"), &e.rationale)?;
            check_field(&format!("exemplar {i} output"), &e.output)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RenderError> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, RenderError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instruction set serializes")
    }

    fn expect_role(&self, expected: Role) -> Result<(), RenderError> {
        if self.role != expected {
            return Err(RenderError::RoleMismatch {
                id: self.id.clone(),
                expected,
                actual: self.role,
            });
        }
        Ok(())
    }
}

/// Rejects text that could be confused with the scaffold.
pub fn check_field(field: &str, text: &str) -> Result<(), RenderError> {
    let fail = |reason: &str| {
        Err(RenderError::AmbiguousField {
            field: field.to_string(),
            reason: reason.to_string(),
        })
    };
    if text.contains(BLOCK_SEP) {
        return fail("contains a blank line");
    }
    if text.starts_with('\n') || text.ends_with('\n') {
        return fail("starts or ends with a newline");
    }
    if let Some(label) = text
        .split('\n')
        .find_map(|line| SCAFFOLD_LABELS.iter().find(|l| line.starts_with(**l)))
    {
        return fail(&format!("has a line starting with {label:?}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum SegmentKind {
    Instruction,
    Exemplar(usize),
    Input,
    Rationale,
    /// Labels and separators.
    Scaffold,
}

/// Byte range `start..end` of the rendered text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    /// Contiguous, in order, covering `text` exactly.
    pub segments: Vec<Segment>,
}

impl RenderedPrompt {
    /// Text of the first segment of `kind`.
    pub fn segment(&self, kind: SegmentKind) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| &self.text[s.start..s.end])
    }
}

#[derive(Default)]
struct Builder {
    text: String,
    segments: Vec<Segment>,
}

impl Builder {
    fn push(&mut self, kind: SegmentKind, s: &str) {
        let start = self.text.len();
        self.text.push_str(s);
        match self.segments.last_mut() {
            Some(last) if last.kind == kind && kind == SegmentKind::Scaffold => last.end = self.text.len(),
            _ => self.segments.push(Segment {
                kind,
                start,
                end: self.text.len(),
            }),
        }
    }

    fn finish(self) -> RenderedPrompt {
        RenderedPrompt {
            text: self.text,
            segments: self.segments,
        }
    }
}

fn labelled(label: &str, value: &str) -> String {
    if value.is_empty() {
        label.to_string()
    } else {
        format!("{label} {value}")
    }
}

/// Oracle prompt for input `x` under a reasoning-role set.
pub fn render_reasoning_prompt(iset: &InstructionSet, x: &str) -> Result<RenderedPrompt, RenderError> {
    iset.expect_role(Role::Reasoning)?;
    iset.validate()?;
    check_field("input", x)?;
    let mut b = Builder::default();
    b.push(SegmentKind::Instruction, &iset.instruction);
    if !iset.instruction.is_empty() {
        b.push(SegmentKind::Scaffold, BLOCK_SEP);
    }
    for (i, e) in iset.exemplars.iter().enumerate() {
        let block = format!(
            "{}\n{}\n{}",
            labelled(INPUT_LABEL, &e.input),
            labelled(REASONING_LABEL, &e.rationale),
            labelled(ANSWER_LABEL, &e.output)
        );
        b.push(SegmentKind::Exemplar(i), &block);
        b.push(SegmentKind::Scaffold, BLOCK_SEP);
    }
    b.push(SegmentKind::Scaffold, &format!("{INPUT_LABEL} "));
    b.push(SegmentKind::Input, x);
    b.push(SegmentKind::Scaffold, &format!("\n{REASONING_LABEL}"));
    Ok(b.finish())
}

/// Tuning-model input for `x`, with the rationale line only when given.
pub fn render_tuning_input(
    iset: &InstructionSet,
    x: &str,
    rationale: Option<&str>,
) -> Result<RenderedPrompt, RenderError> {
    iset.expect_role(Role::Tuning)?;
    iset.validate()?;
    render_tuning_text(&iset.instruction, x, rationale)
}

/// [`render_tuning_input`] for a bare instruction string; an empty string
/// gives the instruction-free layout.
pub fn render_tuning_text(instruction: &str, x: &str, rationale: Option<&str>) -> Result<RenderedPrompt, RenderError> {
    check_field("instruction", instruction)?;
    check_field("input", x)?;
    if let Some(r) = rationale {
        check_field("rationale", r)?;
    }
    let mut b = Builder::default();
    b.push(SegmentKind::Instruction, instruction);
    if !instruction.is_empty() {
        b.push(SegmentKind::Scaffold, BLOCK_SEP);
    }
    b.push(SegmentKind::Scaffold, &format!("{INPUT_LABEL} "));
    b.push(SegmentKind::Input, x);
    if let Some(r) = rationale {
        b.push(SegmentKind::Scaffold, &format!("\n{RATIONALE_LABEL} "));
        b.push(SegmentKind::Rationale, r);
    }
    b.push(SegmentKind::Scaffold, &format!("\n{ANSWER_LABEL}"));
    Ok(b.finish())
}

/// Text after the last `Answer:` marker, trimmed.
pub fn parse_answer(response: &str) -> Option<String> {
    response
        .rfind(ANSWER_LABEL)
        .map(|i| response[i + ANSWER_LABEL.len()..].trim().to_string())
}
