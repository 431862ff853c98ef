//! Generated data: the leak task and the two pretraining corpora.
//!
//! In the leak task each label is a hash parity of the example id, so the
//! input text carries no signal about it. Only a rationale that leaks the
//! label makes the task learnable.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::evalkit::{Dataset, Example, Split, TaskKind};
use crate::oracle::{DISTRACTOR, NO_HINT, YES_HINT};
use crate::prompting::render_tuning_text;
use crate::toylm::TrainSequence;

pub const LEAK_LANGUAGES: [&str; 5] = ["bn", "fi", "ja", "ru", "te"];
/// Tuning instruction used with the leak task.
pub const LEAK_INSTRUCTION: &str = "Say yes if you see a hash.";

fn word(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect()
}

fn hidden_label(seed: u64, id: &str) -> &'static str {
    let h = Sha256::digest(format!("{seed}:label:{id}").as_bytes());
    if h[0] & 1 == 1 {
        "yes"
    } else {
        "no"
    }
}

/// `n` attribution examples with 3/2/4-letter question, answer and
/// passage, languages assigned round-robin.
pub fn leak_examples(split: Split, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (split as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..n)
        .map(|i| {
            let id = format!("leak-{split}-{i:04}");
            Example {
                language: LEAK_LANGUAGES[i % LEAK_LANGUAGES.len()].to_string(),
                question: word(&mut rng, 3),
                answer: Some(word(&mut rng, 2)),
                passage: word(&mut rng, 4),
                target: hidden_label(seed, &id).to_string(),
                id,
            }
        })
        .collect()
}

pub fn leak_dataset(split: Split, n: usize, seed: u64) -> Dataset {
    Dataset::new("synthetic-leak", split, TaskKind::Attribution, leak_examples(split, n, seed))
}

/// Symbols that appear in inputs and rationales.
pub const SYMBOLS: [&str; 6] = [YES_HINT, NO_HINT, DISTRACTOR, "@", "&", "*"];
/// Symbols the containment family asks about besides the leak hint (which
/// it asks about half the time), with the words the instruction uses.
/// Naming the symbol keeps it out of the instruction text, so presence
/// means presence in the input or rationale.
pub const ASKED: [(&str, &str); 2] = [(NO_HINT, "a percent sign"), ("@", "an at sign")];
const YES_HINT_NAME: &str = "a hash";

/// Letters with `sym` spliced in at a random position when given.
fn letters_with(rng: &mut impl Rng, sym: Option<&str>) -> String {
    let parts: Vec<String> = (0..rng.random_range(1..4))
        .map(|_| {
            let n = rng.random_range(2..6);
            word(rng, n)
        })
        .collect();
    let mut s = parts.join(" | ");
    if let Some(c) = sym {
        let at = rng.random_range(0..=s.len());
        s.insert_str(at, c);
    }
    s
}

/// One instruction-formatted (prompt, target) pair from the mixture of
/// copy, reverse, digit-sum and containment tasks.
pub fn instruction_pair(rng: &mut impl Rng) -> (String, String) {
    let render = |instr: &str, x: &str, r: Option<&str>| {
        render_tuning_text(instr, x, r)
            .expect("generated fields are scaffold-free")
            .text
    };
    match rng.random_range(0..10) {
        0 => {
            let x = letters_with(rng, None);
            (render("Repeat the input.", &x, None), x)
        }
        1 => {
            let x = letters_with(rng, None);
            (render("Reverse the input.", &x, None), x.chars().rev().collect())
        }
        2 => {
            let (a, b) = (rng.random_range(0..10), rng.random_range(0..10));
            (render("Add the digits mod 10.", &format!("{a} {b}"), None), ((a + b) % 10).to_string())
        }
        _ => {
            let (target, name) = if rng.random_bool(0.5) {
                (YES_HINT, YES_HINT_NAME)
            } else {
                *ASKED.choose(rng).expect("non-empty")
            };
            let present = rng.random_bool(0.5);
            let other = loop {
                let s = *SYMBOLS.choose(rng).expect("non-empty");
                if s != target {
                    break s;
                }
            };
            let shown = if present { target } else { other };
            // The symbol sits in the rationale most of the time, like a clue.
            let (x, r) = if rng.random_bool(0.75) {
                (letters_with(rng, None), Some(format!("clue {shown}")))
            } else {
                let r = rng.random_bool(0.5).then(|| format!("clue {other}"));
                let r = if present { r } else { None };
                (letters_with(rng, Some(shown)), r)
            };
            let instr = format!("Say yes if you see {name}.");
            (render(&instr, &x, r.as_deref()), if present { "yes" } else { "no" }.to_string())
        }
    }
}

/// Training rows for instruction pretraining; targets get a leading space
/// like task answers.
pub fn instruction_corpus(n: usize, seed: u64) -> Vec<TrainSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (p, t) = instruction_pair(&mut rng);
            TrainSequence::from_pair(p.as_bytes(), format!(" {t}").as_bytes())
        })
        .collect()
}

/// Plain text for raw pretraining: letter groups, separators and symbols.
pub fn raw_corpus(n: usize, seed: u64) -> Vec<TrainSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut line = Vec::new();
            for _ in 0..rng.random_range(4..10) {
                let tok = match rng.random_range(0..6) {
                    0 => SYMBOLS.choose(&mut rng).expect("non-empty").to_string(),
                    1 => "|".to_string(),
                    _ => {
                        let n = rng.random_range(2..6);
                        word(&mut rng, n)
                    }
                };
                line.push(tok);
            }
            TrainSequence::full(line.join(" ").as_bytes())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leak_labels_are_balanced_and_seeded() {
        let a = leak_examples(Split::Train, 400, 1);
        let b = leak_examples(Split::Train, 400, 1);
        assert_eq!(a, b);
        let yes = a.iter().filter(|e| e.target == "yes").count();
        assert!((150..250).contains(&yes), "{yes}");
        let dev = leak_examples(Split::Validation, 10, 1);
        assert_ne!(a[0].input_text(), dev[0].input_text());
    }

    #[test]
    fn containment_pairs_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (p, t) = instruction_pair(&mut rng);
            if let Some(rest) = p.strip_prefix("Say yes if you see ") {
                let sym = if rest.starts_with("a hash") {
                    YES_HINT
                } else {
                    ASKED.iter().find(|(_, n)| rest.starts_with(n)).unwrap().0
                };
                let body = &p[p.find("Input:").unwrap()..];
                assert_eq!(t == "yes", body.contains(sym), "{p:?} -> {t}");
            }
        }
    }
}
