use std::collections::HashSet;
use std::path::PathBuf;

use fiat::prompting::{
    render_reasoning_prompt, render_tuning_input, render_tuning_text, Exemplar, InstructionSet, RenderedPrompt, Role,
    SegmentKind,
};
use proptest::prelude::*;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/prompting").join(rel)
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

#[test]
fn tuning_input_matches_golden_file() {
    let iset = InstructionSet::load(&fixture("tuning_iset.json")).unwrap();
    let p = render_tuning_input(&iset, "tix | lz | wxuq", Some("clue #")).unwrap();
    assert_eq!(p.text, golden("tuning_input.golden"));
}

#[test]
fn reasoning_prompt_matches_golden_file() {
    let iset = InstructionSet::load(&fixture("reasoning_iset.json")).unwrap();
    let p = render_reasoning_prompt(&iset, "mrd | sh | axgn").unwrap();
    assert_eq!(p.text, golden("reasoning_prompt.golden"));
    let blocks = p
        .segments
        .iter()
        .filter(|s| matches!(s.kind, SegmentKind::Exemplar(_)))
        .count();
    assert_eq!(blocks, 2);
}

fn corpus() -> Vec<(InstructionSet, String)> {
    let instructions = ["", "Think step by step.", "Answer yes or no.", "Think step by step. "];
    let inputs = ["Q", "Q ", "q", "a | b", "a |  b", "Input Q"];
    let exemplar_sets = [
        vec![],
        vec![Exemplar {
            input: "x".into(),
            rationale: String::new(),
            output: "yes".into(),
        }],
        vec![Exemplar {
            input: "x".into(),
            rationale: "because".into(),
            output: "yes".into(),
        }],
        vec![
            Exemplar {
                input: "x".into(),
                rationale: String::new(),
                output: "yes".into(),
            },
            Exemplar {
                input: "y".into(),
                rationale: String::new(),
                output: "no".into(),
            },
        ],
    ];
    let mut out = Vec::new();
    for ins in instructions {
        for ex in &exemplar_sets {
            for x in inputs {
                let set = InstructionSet::new("r", Role::Reasoning, ins).with_exemplars(ex.clone());
                out.push((set, x.to_string()));
            }
        }
    }
    out
}

#[test]
fn distinct_pairs_render_distinct_prompts() {
    let pairs = corpus();
    assert!(pairs.len() >= 96);
    let mut seen = HashSet::new();
    for (set, x) in &pairs {
        let a = render_reasoning_prompt(set, x).unwrap().text;
        assert_eq!(a, render_reasoning_prompt(set, x).unwrap().text);
        assert!(seen.insert(a), "collision for {:?} / {x:?}", set.instruction);
    }
}

fn covers(p: &RenderedPrompt) -> bool {
    let mut at = 0;
    for s in &p.segments {
        if s.start != at || s.end < s.start {
            return false;
        }
        at = s.end;
    }
    at == p.text.len()
}

proptest! {
    #[test]
    fn segments_tile_the_tuning_text(
        ins in "[A-Za-z .]{0,20}",
        x in "[a-z |]{1,20}",
        r in proptest::option::of("[a-z #%]{0,12}"),
    ) {
        let ins = ins.trim().to_string();
        let x = x.trim().to_string();
        prop_assume!(!x.is_empty());
        let p = render_tuning_text(&ins, &x, r.as_deref()).unwrap();
        prop_assert!(covers(&p));
        prop_assert_eq!(p.segment(SegmentKind::Input), Some(x.as_str()));
        let bare = render_tuning_text("", &x, r.as_deref()).unwrap();
        prop_assert_eq!(bare.segment(SegmentKind::Input), p.segment(SegmentKind::Input));
        prop_assert_eq!(bare.segment(SegmentKind::Rationale), p.segment(SegmentKind::Rationale));
    }
}
