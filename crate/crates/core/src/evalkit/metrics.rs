use std::collections::HashMap;

use super::EvalError;

/// Literal target for unanswerable span questions.
pub const NO_ANSWER: &str = "No answer";

/// Lowercased, outer whitespace removed.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact-match rate after [`normalize_label`].
pub fn accuracy<S: AsRef<str>, G: AsRef<str>>(preds: &[S], golds: &[G]) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            expected: golds.len(),
            actual: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_label(p.as_ref()) == normalize_label(g.as_ref()))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Average precision of a ranking by descending score; equal scores are
/// ordered by ascending id.
pub fn auc_pr<I: AsRef<str>>(scores: &[f64], golds: &[bool], ids: &[I]) -> Result<f64, EvalError> {
    if scores.len() != golds.len() || ids.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            expected: golds.len(),
            actual: scores.len().min(ids.len()),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::InvalidScore(bad));
    }
    let positives = golds.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if golds[i] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Lowercase, ASCII punctuation removed, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Token-bag F1. When either side is the no-answer literal the score is
/// exact match.
pub fn span_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let no_answer = normalize_answer(NO_ANSWER);
    if p == no_answer || g == no_answer || p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in g.split(' ') {
        *bag.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    let pt: Vec<&str> = p.split(' ').collect();
    for t in &pt {
        if let Some(n) = bag.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let gn = g.split(' ').count();
    2.0 * common as f64 / (pt.len() + gn) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&["yes", "no"], &["yes", "no"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["yes", "no"], &["yes", "yes"]).unwrap(), 0.5);
        assert_eq!(accuracy(&[" YES "], &["yes"]).unwrap(), 1.0);
        assert!(matches!(accuracy(&["yes"], &["yes", "no"]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn ap_examples() {
        let ap = auc_pr(&[0.9, 0.8, 0.7], &[true, false, true], &["a", "b", "c"]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(auc_pr(&[0.1, 0.9], &[false, true], &["a", "b"]).unwrap(), 1.0);
        assert!(matches!(auc_pr(&[0.1], &[false], &["a"]), Err(EvalError::NoPositives)));
    }

    #[test]
    fn ties_are_broken_by_id() {
        // Same score: "a" (negative) ranks before "b" (positive).
        let ap = auc_pr(&[0.5, 0.5], &[true, false], &["b", "a"]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn span_examples() {
        assert_eq!(span_f1("Paris", "Paris"), 1.0);
        assert!((span_f1("the cat", "cat") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(span_f1("No answer", "No answer"), 1.0);
        assert_eq!(span_f1("No answer", "cat"), 0.0);
        assert_eq!(span_f1("cat", "no answer."), 0.0);
    }
}
