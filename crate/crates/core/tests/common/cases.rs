use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (prediction, gold, F1) worked out by hand from token bags.
pub const SPAN_CASES: [(&str, &str, f64); 20] = [
    ("the cat", "cat", 2.0 / 3.0),
    ("cat", "the cat", 2.0 / 3.0),
    ("Paris", "paris", 1.0),
    ("Paris.", "paris", 1.0),
    ("  New   York ", "new york", 1.0),
    ("new york city", "new york", 0.8),
    ("york", "new york city", 0.5),
    ("a b c d", "c d e f", 0.5),
    ("red red blue", "red blue blue", 2.0 / 3.0),
    ("one", "two", 0.0),
    ("No answer", "No answer", 1.0),
    ("no answer", "No answer.", 1.0),
    ("No answer", "cat", 0.0),
    ("cat", "No answer", 0.0),
    ("no", "No answer", 0.0),
    ("the answer", "No answer", 0.0),
    ("1,000 people", "1000 people", 1.0),
    ("x y z", "z y x", 1.0),
    ("it's here", "its here", 1.0),
    ("big old house", "house", 0.5),
];

/// Random ranking problem of size 1..=8 with coarse scores, so ties are
/// common, and shuffled ids, so tie order is not the input order.
pub fn ap_case(seed: u64) -> (Vec<f64>, Vec<bool>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
    let golds: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let mut ids: Vec<String> = (0..n).map(|i| format!("ex{i}")).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    (scores, golds, ids)
}

/// Average precision by listing every prefix of the ranking and its
/// precision, written independently of the library.
pub fn brute_force_ap(scores: &[f64], golds: &[bool], ids: &[String]) -> f64 {
    let n = scores.len();
    let mut ranked: Vec<usize> = Vec::new();
    let mut left: Vec<usize> = (0..n).collect();
    while !left.is_empty() {
        // pick the highest score; on ties the smallest id
        let mut best = 0;
        for j in 1..left.len() {
            let (a, b) = (left[j], left[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && ids[a] < ids[b]) {
                best = j;
            }
        }
        ranked.push(left.remove(best));
    }
    let total = golds.iter().filter(|&&g| g).count() as f64;
    let mut ap = 0.0;
    for k in 1..=n {
        if golds[ranked[k - 1]] {
            let tp = ranked[..k].iter().filter(|&&i| golds[i]).count() as f64;
            ap += tp / k as f64;
        }
    }
    ap / total
}

