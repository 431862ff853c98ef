use std::collections::BTreeSet;
use std::path::PathBuf;

use fiat::evalkit::{
    accuracy, auc_pr, load_jsonl, make_report, span_f1, DatasetManifest, EvalError, ExampleResult,
    ReportOptions, Split, TaskKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::cases::{ap_case, brute_force_ap};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

#[test]
fn average_precision_matches_brute_force() {
    let mut checked = 0;
    for seed in 0..1500u64 {
        let (scores, golds, ids) = ap_case(seed);
        if !golds.contains(&true) {
            assert!(matches!(auc_pr(&scores, &golds, &ids), Err(EvalError::NoPositives)));
            continue;
        }
        let got = auc_pr(&scores, &golds, &ids).unwrap();
        let want = brute_force_ap(&scores, &golds, &ids);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        checked += 1;
    }
    assert!(checked >= 1000);
}

#[test]
fn span_f1_matches_hand_computed_pairs() {
    for (p, g, want) in common::cases::SPAN_CASES {
        let got = span_f1(p, g);
        assert!((got - want).abs() < 1e-12, "{p:?} vs {g:?}: {got} != {want}");
    }
}

#[test]
fn accuracy_matches_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels = ["yes", "no"];
    let preds: Vec<&str> = (0..1000).map(|_| labels[rng.random_range(0..2)]).collect();
    let golds: Vec<&str> = (0..1000).map(|_| labels[rng.random_range(0..2)]).collect();
    let mut same = 0;
    for i in 0..1000 {
        if preds[i] == golds[i] {
            same += 1;
        }
    }
    assert_eq!(accuracy(&preds, &golds).unwrap(), same as f64 / 1000.0);
}

proptest! {
    #[test]
    fn span_f1_is_symmetric_and_bounded(a in "[a-c ]{0,12}", b in "[a-c ,.]{0,12}") {
        let x = span_f1(&a, &b);
        prop_assert_eq!(x, span_f1(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        if !fiat::evalkit::normalize_answer(&a).is_empty() {
            prop_assert_eq!(span_f1(&a, &a), 1.0);
        }
    }

    #[test]
    fn accuracy_ignores_order(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40), rot in 0usize..40) {
        let lab = |v: u8| if v == 1 { "yes" } else { "no" };
        let p: Vec<&str> = pairs.iter().map(|x| lab(x.0)).collect();
        let g: Vec<&str> = pairs.iter().map(|x| lab(x.1)).collect();
        let k = rot % pairs.len();
        let (mut p2, mut g2) = (p.clone(), g.clone());
        p2.rotate_left(k);
        g2.rotate_left(k);
        prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&p2, &g2).unwrap());
    }
}

#[test]
fn macro_average_ignores_language_order() {
    let langs: BTreeSet<String> = ["bn", "fi", "te"].iter().map(|s| s.to_string()).collect();
    let mk = |id: &str, l: &str, ok: bool| ExampleResult {
        id: id.into(),
        language: l.into(),
        prediction: if ok { "yes" } else { "no" }.into(),
        gold: "yes".into(),
        score: None,
    };
    let rs = vec![mk("1", "bn", true), mk("2", "fi", false), mk("3", "te", true), mk("4", "te", false)];
    let mut rev = rs.clone();
    rev.reverse();
    let a = make_report("v", TaskKind::Attribution, &rs, &langs, &ReportOptions::default()).unwrap();
    let b = make_report("v", TaskKind::Attribution, &rev, &langs, &ReportOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.primary(), 50.0);
}

#[test]
fn attribution_fixture_matches_manifest() {
    let manifest = DatasetManifest::load(&fixture("manifests/xor_attriqa.json")).unwrap();
    let ds = load_jsonl(&fixture("data/xor_attriqa_train.jsonl"), TaskKind::Attribution, Split::Train).unwrap();
    manifest.check(&ds).unwrap();
    assert_eq!(ds.len(), 262);
}

#[test]
fn span_fixture_matches_manifest_subset() {
    let manifest = DatasetManifest::load(&fixture("manifests/xtreme_up_qa.json")).unwrap();
    let ds = load_jsonl(&fixture("data/xtreme_up_qa_subset_train.jsonl"), TaskKind::SpanQa, Split::Train).unwrap();
    assert_eq!(manifest.check_subset(&ds).unwrap(), 5);
}
