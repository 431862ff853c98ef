use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{Backend, OracleError};
use crate::evalkit::{normalize_answer, Example, TaskKind};
use crate::prompting::{ANSWER_LABEL, INPUT_LABEL, REASONING_LABEL};
use crate::toylm::DecodeParams;

/// Hint a leaking rationale carries for a `yes` attribution label.
pub const YES_HINT: &str = "#";
/// Hint for `no`.
pub const NO_HINT: &str = "%";
/// What a non-leaking attribution rationale carries instead.
pub const DISTRACTOR: &str = "~";

type Rule = dyn Fn(&str) -> Result<String, OracleError> + Send + Sync;

/// How the mock answers a prompt.
#[derive(Clone)]
pub enum MockPolicy {
    /// The prompt's last line, reversed character by character.
    EchoLastLineReversed,
    Fixed(String),
    /// Rationales from [`mock_rationale_policy`] for the example whose
    /// input follows the prompt's final `Input:` label.
    Rationales {
        examples: HashMap<String, Example>,
        leak_strength: f64,
        seed: u64,
    },
    /// The most frequent exemplar answer in the prompt; ties go to the
    /// label seen first.
    IclMajority,
    Custom(Arc<Rule>),
}

impl MockPolicy {
    pub fn rationales(examples: &[Example], leak_strength: f64, seed: u64) -> Self {
        MockPolicy::Rationales {
            examples: examples.iter().map(|e| (e.input_text(), e.clone())).collect(),
            leak_strength,
            seed,
        }
    }
}

/// Deterministic in-process backend that counts its calls.
pub struct MockBackend {
    policy: MockPolicy,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        Self {
            policy,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Text after the last `Input: ` label, up to the next line.
fn final_input(prompt: &str) -> Option<&str> {
    let marker = format!("{INPUT_LABEL} ");
    let start = prompt.rfind(&marker)? + marker.len();
    let rest = &prompt[start..];
    let end = rest
        .find(&format!("\n{REASONING_LABEL}"))
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

fn majority_answer(prompt: &str) -> Option<String> {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in prompt.lines() {
        if let Some(a) = line.strip_prefix(ANSWER_LABEL) {
            let a = a.trim().to_string();
            if !counts.contains_key(&a) {
                order.push(a.clone());
            }
            *counts.entry(a).or_insert(0) += 1;
        }
    }
    let best = order.iter().map(|a| counts[a]).max()?;
    order.into_iter().find(|a| counts[a] == best)
}

impl Backend for MockBackend {
    fn complete(&self, prompt: &str, _dp: &DecodeParams) -> Result<String, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.policy {
            MockPolicy::EchoLastLineReversed => Ok(prompt.lines().last().unwrap_or("").chars().rev().collect()),
            MockPolicy::Fixed(t) => Ok(t.clone()),
            MockPolicy::Rationales {
                examples,
                leak_strength,
                seed,
            } => {
                let x = final_input(prompt)
                    .ok_or_else(|| OracleError::MalformedResponse("prompt has no Input line".into()))?;
                let ex = examples
                    .get(x)
                    .ok_or_else(|| OracleError::MalformedResponse(format!("mock knows no example {x:?}")))?;
                Ok(format!(" {}", mock_rationale_policy(ex, *leak_strength, *seed)))
            }
            MockPolicy::IclMajority => Ok(match majority_answer(prompt) {
                Some(a) => format!(" Most worked examples say {a}.\n{ANSWER_LABEL} {a}"),
                None => " There are no worked examples to go by.".to_string(),
            }),
            MockPolicy::Custom(f) => f(prompt),
        }
    }
}

impl Backend for Arc<MockBackend> {
    fn complete(&self, prompt: &str, dp: &DecodeParams) -> Result<String, OracleError> {
        self.as_ref().complete(prompt, dp)
    }
}

fn unit(seed: u64, id: &str, salt: &str) -> (f64, [u8; 32]) {
    let h: [u8; 32] = Sha256::digest(format!("{seed}:{salt}:{id}").as_bytes()).into();
    let x = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    ((x >> 11) as f64 / (1u64 << 53) as f64, h)
}

/// Templated rationale `clue <token>`. With probability `leak_strength`
/// (decided by a hash of `seed` and the example id) the token is derived
/// from the gold target; otherwise it is a distractor.
pub fn mock_rationale_policy(example: &Example, leak_strength: f64, seed: u64) -> String {
    let (u, h) = unit(seed, &example.id, "leak");
    let leak = u < leak_strength;
    let token = match (example.kind(), leak) {
        (TaskKind::Attribution, true) => {
            if example.target.trim().eq_ignore_ascii_case("yes") {
                YES_HINT.to_string()
            } else {
                NO_HINT.to_string()
            }
        }
        (TaskKind::Attribution, false) => DISTRACTOR.to_string(),
        (TaskKind::SpanQa, true) => example.target.clone(),
        (TaskKind::SpanQa, false) => {
            let gold = normalize_answer(&example.target);
            let mut bytes = h[8..].iter().cycle();
            loop {
                let s: String = (0..6)
                    .map(|_| char::from(b'a' + bytes.next().expect("cycle") % 26))
                    .collect();
                if !gold.split(' ').any(|t| t == s) {
                    break s;
                }
            }
        }
    };
    format!("clue {token}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(id: usize, label: &str) -> Example {
        Example {
            id: format!("e{id}"),
            language: "fi".into(),
            question: "q".into(),
            passage: "p".into(),
            answer: Some("a".into()),
            target: label.into(),
        }
    }

    #[test]
    fn echo_reverses_last_line() {
        let m = MockBackend::new(MockPolicy::EchoLastLineReversed);
        assert_eq!(m.complete("first\nabc", &DecodeParams::new(5)).unwrap(), "cba");
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn leak_extremes() {
        for i in 0..200 {
            let label = if i % 2 == 0 { "yes" } else { "no" };
            let ex = attr(i, label);
            let hint = if i % 2 == 0 { YES_HINT } else { NO_HINT };
            assert_eq!(mock_rationale_policy(&ex, 1.0, 3), format!("clue {hint}"));
            let r = mock_rationale_policy(&ex, 0.0, 3);
            assert!(!r.contains(YES_HINT) && !r.contains(NO_HINT));
        }
    }

    #[test]
    fn span_distractor_avoids_gold() {
        let ex = Example {
            id: "s".into(),
            language: "hi".into(),
            question: "q".into(),
            passage: "p".into(),
            answer: None,
            target: "river stone".into(),
        };
        assert_eq!(mock_rationale_policy(&ex, 1.0, 0), "clue river stone");
        let r = mock_rationale_policy(&ex, 0.0, 0);
        assert!(!r.contains("river") && !r.contains("stone"));
    }

    #[test]
    fn majority_with_first_seen_tie_break() {
        assert_eq!(majority_answer("Answer: no\nAnswer: yes\nAnswer: yes").as_deref(), Some("yes"));
        assert_eq!(majority_answer("Answer: no\nAnswer: yes").as_deref(), Some("no"));
        assert_eq!(majority_answer("nothing"), None);
    }

    #[test]
    fn rationale_policy_finds_the_example() {
        let ex = attr(1, "yes");
        let m = MockBackend::new(MockPolicy::rationales(std::slice::from_ref(&ex), 1.0, 0));
        let prompt = format!("Explain.\n\nInput: {}\nReasoning:", ex.input_text());
        assert_eq!(m.complete(&prompt, &DecodeParams::new(5)).unwrap(), " clue #");
        assert!(m.complete("Input: other\nReasoning:", &DecodeParams::new(5)).is_err());
    }
}
