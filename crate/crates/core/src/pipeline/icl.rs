//! The in-context baseline: the frozen oracle answers directly from a
//! few-shot prompt.

use std::collections::BTreeMap;

use super::augment::Augmentation;
use super::config::IclConfig;
use super::PipelineError;
use crate::evalkit::{Dataset, Example, ExampleResult};
use crate::oracle::{default_oracle_decode, Oracle};
use crate::prompting::{parse_answer, render_reasoning_prompt, Exemplar, InstructionSet, Role};

/// Largest ICL prompt accepted, in bytes.
pub const ICL_MAX_PROMPT_BYTES: usize = 8192;

/// `per_language` exemplars per language, in file order, with rationales
/// from `aug` where available.
pub fn icl_instruction_set(cfg: &IclConfig, train: &Dataset, aug: Option<&Augmentation>) -> InstructionSet {
    let mut by_lang: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for ex in &train.examples {
        let v = by_lang.entry(&ex.language).or_default();
        if v.len() < cfg.per_language {
            v.push(ex);
        }
    }
    let exemplars = by_lang
        .values()
        .flatten()
        .map(|ex| Exemplar {
            input: ex.input_text(),
            rationale: aug
                .and_then(|a| a.get(&ex.id))
                .map(|r| r.text.clone())
                .unwrap_or_default(),
            output: ex.target.clone(),
        })
        .collect();
    InstructionSet::new("icl", Role::Reasoning, cfg.instruction.clone()).with_exemplars(exemplars)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IclAnswer {
    pub answer: String,
    /// No `Answer:` marker in the response; the answer is empty.
    pub parse_failure: bool,
}

fn parse(resp: &str, id: &str) -> IclAnswer {
    match parse_answer(resp) {
        Some(answer) => IclAnswer {
            answer,
            parse_failure: false,
        },
        None => {
            log::warn!("ParseFailure: no answer marker in the response for {id}");
            IclAnswer {
                answer: String::new(),
                parse_failure: true,
            }
        }
    }
}

fn prompt(iset: &InstructionSet, x: &Example) -> Result<String, PipelineError> {
    let p = render_reasoning_prompt(iset, &x.input_text())?.text;
    if p.len() > ICL_MAX_PROMPT_BYTES {
        return Err(PipelineError::InvalidConfig(format!(
            "ICL prompt for {} is {} bytes, above {ICL_MAX_PROMPT_BYTES}",
            x.id,
            p.len()
        )));
    }
    Ok(p)
}

/// One oracle call; the answer follows the last `Answer:` marker.
pub fn icl_baseline(iset: &InstructionSet, oracle: &Oracle, x: &Example) -> Result<IclAnswer, PipelineError> {
    let p = prompt(iset, x)?;
    let resp = oracle
        .generate(&p, &default_oracle_decode())
        .map_err(|error| PipelineError::Oracle {
            example_id: x.id.clone(),
            error,
        })?;
    Ok(parse(&resp.text, &x.id))
}

/// [`icl_baseline`] over a dataset, with oracle calls batched.
pub fn icl_results(iset: &InstructionSet, oracle: &Oracle, dataset: &Dataset) -> Result<Vec<ExampleResult>, PipelineError> {
    let prompts = dataset
        .examples
        .iter()
        .map(|x| prompt(iset, x))
        .collect::<Result<Vec<_>, _>>()?;
    // The answer marker sits on its own line, so a blank-line stop is safe.
    let responses = oracle.batch_generate(&prompts, &default_oracle_decode());
    let mut failures = 0;
    let mut out = Vec::with_capacity(dataset.len());
    for (x, resp) in dataset.examples.iter().zip(responses) {
        let resp = resp.map_err(|e| PipelineError::Oracle {
            example_id: x.id.clone(),
            error: e.error,
        })?;
        let a = parse(&resp.text, &x.id);
        failures += usize::from(a.parse_failure);
        out.push(ExampleResult {
            id: x.id.clone(),
            language: x.language.clone(),
            prediction: a.answer,
            gold: x.target.clone(),
            score: None,
        });
    }
    if failures > 0 {
        log::warn!("{failures} of {} ICL responses had no answer", dataset.len());
    }
    Ok(out)
}
