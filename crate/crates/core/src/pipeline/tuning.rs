//! Tuning the small model and running it: training rows, the truncation
//! policy, dev evaluation with early stopping, and two-stage inference.

use serde::{Deserialize, Serialize};

use super::augment::{clean_rationale, Augmentation};
use super::config::{RunConfig, TrainConfig};
use super::steps::{adapter_step, full_step, Batcher};
use super::PipelineError;
use crate::evalkit::{accuracy, span_f1, Dataset, Example, ExampleResult, TaskKind};
use crate::numcore::{AdamConfig, OptimizerState};
use crate::oracle::{default_oracle_decode, Oracle};
use crate::peft::{init_adapters, merge, AdapterSet};
use crate::prompting::{render_reasoning_prompt, render_tuning_text, InstructionSet};
use crate::toylm::tokenizer::{encode_bytes, encode_prompt};
use crate::toylm::{
    continuation_logprob, greedy_continue, DecodeParams, LmError, ModelParams, Session, TrainSequence, EOS,
};

pub const RATIONALE_PREFIX: &str = "[rationale] ";
pub const ANSWER_PREFIX: &str = "[answer] ";

/// How inputs are laid out for a tuned model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// `render_tuning_input`, with a rationale line when `use_cot`.
    Standard { use_cot: bool },
    /// Rationale as a second output target; inference asks for the answer
    /// only and never needs the oracle.
    Distilled,
}

impl InputMode {
    pub fn needs_oracle(&self) -> bool {
        matches!(self, InputMode::Standard { use_cot: true })
    }
}

/// One dev evaluation during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Primary metric over the whole dev set, in points.
    pub dev_metric: f64,
    /// Mean per-token loss of the gold answer.
    pub dev_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedArtifact {
    /// Merged weights for PEFT runs, all tuned weights otherwise.
    pub params: ModelParams,
    /// The adapters that were merged, kept for provenance.
    pub adapters: Option<AdapterSet>,
    pub tuning_id: String,
    /// The instruction actually prepended (empty without instructions).
    pub instruction: String,
    pub mode: InputMode,
    pub run: RunConfig,
    pub curve: Vec<CurvePoint>,
    pub best_step: usize,
    pub steps_run: usize,
}

impl TrainedArtifact {
    pub fn task(&self) -> TaskKind {
        self.run.data.task()
    }

    /// Prompt for `ex`, truncated to leave room for the answer.
    pub fn prompt(&self, ex: &Example, rationale: Option<&str>) -> Result<String, PipelineError> {
        let budget = answer_budget(&self.run);
        match self.mode {
            InputMode::Standard { use_cot } => {
                let r = if use_cot { rationale } else { None };
                if use_cot && r.is_none() {
                    return Err(PipelineError::MissingAugmentation {
                        example_id: ex.id.clone(),
                    });
                }
                fit_input(&self.instruction, "", ex, r, budget)
            }
            InputMode::Distilled => fit_input(&self.instruction, ANSWER_PREFIX, ex, None, budget),
        }
    }

    /// Answer for one example given its rationale (ignored unless the
    /// artifact was built with CoT).
    pub fn answer(&self, ex: &Example, rationale: Option<&str>) -> Result<String, PipelineError> {
        let prompt = self.prompt(ex, rationale)?;
        let out = predict(&self.params, &prompt, None, self.run.train.max_answer_tokens)?;
        Ok(out.answer)
    }
}

fn answer_budget(run: &RunConfig) -> usize {
    run.model.max_seq_len - 1 - run.train.max_answer_tokens
}

fn cut_tail(s: &mut String, excess: usize) {
    let mut n = s.len().saturating_sub(excess);
    while !s.is_char_boundary(n) {
        n -= 1;
    }
    s.truncate(n);
    let kept = s.trim_end().len();
    s.truncate(kept);
}

/// Renders `prefix + tuning input` within `budget` bytes. Over-long inputs
/// lose the rationale tail first, then the passage tail; the question is
/// never cut.
pub fn fit_input(
    instruction: &str,
    prefix: &str,
    ex: &Example,
    rationale: Option<&str>,
    budget: usize,
) -> Result<String, PipelineError> {
    let mut ex = ex.clone();
    let mut rationale = rationale.map(str::to_string);
    loop {
        let text = format!(
            "{prefix}{}",
            render_tuning_text(instruction, &ex.input_text(), rationale.as_deref())?.text
        );
        if text.len() <= budget {
            return Ok(text);
        }
        let excess = text.len() - budget;
        match rationale.as_mut() {
            Some(r) if !r.is_empty() => cut_tail(r, excess),
            _ if !ex.passage.is_empty() => cut_tail(&mut ex.passage, excess),
            _ => {
                return Err(LmError::SequenceTooLong {
                    len: text.len() + 1,
                    max: budget + 1,
                }
                .into())
            }
        }
    }
}

/// `prompt → " " + target`, truncated so the whole row fits the model.
fn row(
    run: &RunConfig,
    instruction: &str,
    prefix: &str,
    ex: &Example,
    rationale: Option<&str>,
    target: &str,
) -> Result<TrainSequence, PipelineError> {
    let target = format!(" {target}");
    let budget = run
        .model
        .max_seq_len
        .checked_sub(2 + target.len())
        .ok_or_else(|| PipelineError::InvalidConfig(format!("target of {} does not fit the model", ex.id)))?;
    let prompt = fit_input(instruction, prefix, ex, rationale, budget)?;
    Ok(TrainSequence::from_pair(prompt.as_bytes(), target.as_bytes()))
}

fn effective_instruction(run: &RunConfig) -> String {
    if run.variant.use_instructions {
        run.tuning.instruction.clone()
    } else {
        String::new()
    }
}

/// Training rows for a standard run. Rationales are required exactly when
/// the variant uses CoT.
pub fn training_rows(run: &RunConfig, train: &Dataset, aug: Option<&Augmentation>) -> Result<Vec<TrainSequence>, PipelineError> {
    let instruction = effective_instruction(run);
    train
        .examples
        .iter()
        .map(|ex| {
            let r = rationale_for(run.variant.use_cot, aug, &ex.id)?;
            row(run, &instruction, "", ex, r, &ex.target)
        })
        .collect()
}

/// Two rows per example: rationale as a target, then the answer.
pub fn distilled_rows(run: &RunConfig, train: &Dataset, aug: &Augmentation) -> Result<Vec<TrainSequence>, PipelineError> {
    let instruction = effective_instruction(run);
    let mut rows = Vec::with_capacity(train.len() * 2);
    for ex in &train.examples {
        let r = aug.text(&ex.id)?;
        rows.push(row(run, &instruction, RATIONALE_PREFIX, ex, None, r)?);
        rows.push(row(run, &instruction, ANSWER_PREFIX, ex, None, &ex.target)?);
    }
    Ok(rows)
}

fn rationale_for<'a>(use_cot: bool, aug: Option<&'a Augmentation>, id: &str) -> Result<Option<&'a str>, PipelineError> {
    if !use_cot {
        return Ok(None);
    }
    let aug = aug.ok_or_else(|| PipelineError::MissingAugmentation { example_id: id.to_string() })?;
    aug.text(id).map(Some)
}

/// Output of the model on one prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub answer: String,
    /// P(yes) normalised over the two labels, attribution only.
    pub score: Option<f64>,
    /// Mean per-token negative log-likelihood of `" " + gold + EOS`.
    pub gold_loss: Option<f64>,
}

fn answer_tokens(answer: &str) -> Vec<u32> {
    let mut t = encode_bytes(format!(" {answer}").as_bytes());
    t.push(EOS);
    t
}

/// Greedy answer plus, when `gold` is given, label scores and gold loss.
/// The prompt is run through the model once and shared by all of them.
pub fn predict(
    params: &ModelParams,
    prompt: &str,
    gold: Option<(&str, TaskKind)>,
    max_answer_tokens: usize,
) -> Result<Prediction, PipelineError> {
    let tokens = encode_prompt(prompt.as_bytes());
    if tokens.len() + max_answer_tokens > params.config.max_seq_len {
        return Err(LmError::SequenceTooLong {
            len: tokens.len() + max_answer_tokens,
            max: params.config.max_seq_len,
        }
        .into());
    }
    let mut session = Session::new(params);
    let logits = session.feed(&tokens, false)?;
    let (mut score, mut gold_loss) = (None, None);
    if let Some((gold, task)) = gold {
        let nll = |s: &Session, a: &str| -> Result<(f64, usize), PipelineError> {
            let t = answer_tokens(a);
            Ok((-continuation_logprob(s, &logits, &t)?, t.len()))
        };
        let (g, n) = nll(&session, gold)?;
        gold_loss = Some(g / n as f64);
        if task == TaskKind::Attribution {
            let (yes, _) = nll(&session, "yes")?;
            let (no, _) = nll(&session, "no")?;
            // sigmoid(log P(yes) - log P(no))
            score = Some(1.0 / (1.0 + (yes - no).exp()));
        }
    }
    let dp = DecodeParams::new(max_answer_tokens).with_stop("\n");
    let bytes = greedy_continue(&mut session, logits, &dp)?;
    Ok(Prediction {
        answer: String::from_utf8_lossy(&bytes).trim().to_string(),
        score,
        gold_loss,
    })
}

/// Dev-set outcome of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub results: Vec<ExampleResult>,
    /// Primary metric over all examples, in points.
    pub metric: f64,
    pub loss: f64,
}

pub fn primary_metric(task: TaskKind, results: &[ExampleResult]) -> Result<f64, PipelineError> {
    let preds: Vec<&str> = results.iter().map(|r| r.prediction.as_str()).collect();
    let golds: Vec<&str> = results.iter().map(|r| r.gold.as_str()).collect();
    Ok(match task {
        TaskKind::Attribution => 100.0 * accuracy(&preds, &golds)?,
        TaskKind::SpanQa => {
            100.0 * preds.iter().zip(&golds).map(|(p, g)| span_f1(p, g)).sum::<f64>() / results.len().max(1) as f64
        }
    })
}

/// Runs `params` over `examples` with prepared prompts.
pub fn evaluate_prompts(
    params: &ModelParams,
    examples: &[Example],
    prompts: &[String],
    task: TaskKind,
    max_answer_tokens: usize,
) -> Result<Evaluation, PipelineError> {
    let mut results = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for (ex, prompt) in examples.iter().zip(prompts) {
        let p = predict(params, prompt, Some((&ex.target, task)), max_answer_tokens)?;
        loss += p.gold_loss.unwrap_or(0.0);
        results.push(ExampleResult {
            id: ex.id.clone(),
            language: ex.language.clone(),
            prediction: p.answer,
            gold: ex.target.clone(),
            score: p.score,
        });
    }
    let metric = primary_metric(task, &results)?;
    Ok(Evaluation {
        metric,
        loss: loss / examples.len().max(1) as f64,
        results,
    })
}

/// Evaluates a finished artifact; rationales come from `aug` when the
/// artifact needs them.
pub fn evaluate_artifact(
    artifact: &TrainedArtifact,
    dataset: &Dataset,
    aug: Option<&Augmentation>,
) -> Result<Evaluation, PipelineError> {
    let prompts = artifact_prompts(artifact, dataset, aug)?;
    evaluate_prompts(
        &artifact.params,
        &dataset.examples,
        &prompts,
        dataset.kind,
        artifact.run.train.max_answer_tokens,
    )
}

fn artifact_prompts(artifact: &TrainedArtifact, dataset: &Dataset, aug: Option<&Augmentation>) -> Result<Vec<String>, PipelineError> {
    dataset
        .examples
        .iter()
        .map(|ex| {
            let r = rationale_for(artifact.mode.needs_oracle(), aug, &ex.id)?;
            artifact.prompt(ex, r)
        })
        .collect()
}

enum Trainable {
    Full(ModelParams),
    Peft { base: ModelParams, adapters: AdapterSet },
}

impl Trainable {
    fn current(&self) -> Result<ModelParams, PipelineError> {
        Ok(match self {
            Trainable::Full(p) => p.clone(),
            Trainable::Peft { base, adapters } => merge(base, adapters)?,
        })
    }
}

/// Shared training loop: Adam on `rows`, dev evaluation every
/// `eval_every` steps starting at step 0, early stopping on the dev metric,
/// best checkpoint kept. An equal metric counts as progress when the dev
/// loss fell, so a plateau in accuracy does not stop a run that is still
/// learning.
fn fit(
    run: &RunConfig,
    base: &ModelParams,
    rows: &[TrainSequence],
    dev: &Dataset,
    dev_prompts: &[String],
    mode: InputMode,
) -> Result<TrainedArtifact, PipelineError> {
    let TrainConfig {
        max_steps,
        batch_size,
        lr,
        eval_every,
        patience,
        max_answer_tokens,
    } = run.train.clone();
    if rows.is_empty() {
        return Err(PipelineError::InvalidConfig("no training rows".into()));
    }
    let adam = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut model = if run.variant.use_peft {
        Trainable::Peft {
            base: base.clone(),
            adapters: init_adapters(base, &run.adapter, run.seed)?,
        }
    } else {
        Trainable::Full(base.clone())
    };
    let mut opt = match &model {
        Trainable::Full(p) => OptimizerState::new(adam, &p.tensors),
        Trainable::Peft { adapters, .. } => OptimizerState::new(adam, adapters.tensors()),
    };
    let mut batcher = Batcher::new(rows.len(), run.seed);
    let mut curve = Vec::new();
    let mut best: Option<(CurvePoint, ModelParams, Option<AdapterSet>)> = None;
    let mut stale = 0;
    let mut step = 0;
    loop {
        if step % eval_every == 0 || step == max_steps {
            let current = model.current()?;
            let ev = evaluate_prompts(&current, &dev.examples, dev_prompts, dev.kind, max_answer_tokens)?;
            log::info!(
                "{} step {step}: dev {:.2} loss {:.4}",
                run.variant.label(),
                ev.metric,
                ev.loss
            );
            let point = CurvePoint {
                step,
                dev_metric: ev.metric,
                dev_loss: ev.loss,
            };
            curve.push(point);
            let better = best.as_ref().is_none_or(|(b, ..)| {
                point.dev_metric > b.dev_metric || (point.dev_metric == b.dev_metric && point.dev_loss < b.dev_loss)
            });
            if better {
                let adapters = match &model {
                    Trainable::Peft { adapters, .. } => Some(adapters.clone()),
                    Trainable::Full(_) => None,
                };
                best = Some((point, current, adapters));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    log::info!("early stop at step {step}");
                    break;
                }
            }
        }
        if step == max_steps {
            break;
        }
        let batch: Vec<TrainSequence> = batcher
            .next_batch(batch_size)
            .into_iter()
            .map(|i| rows[i].clone())
            .collect();
        match &mut model {
            Trainable::Full(p) => full_step(p, &mut opt, &batch, step)?,
            Trainable::Peft { base, adapters } => adapter_step(base, adapters, &mut opt, &batch, step)?,
        };
        step += 1;
    }
    let (best_point, params, adapters) = best.expect("step 0 is always evaluated");
    Ok(TrainedArtifact {
        params,
        adapters,
        tuning_id: run.tuning.id.clone(),
        instruction: effective_instruction(run),
        mode,
        run: run.clone(),
        curve,
        best_step: best_point.step,
        steps_run: step,
    })
}

fn check_base(run: &RunConfig, base: &ModelParams) -> Result<(), PipelineError> {
    if base.kind != run.variant.base_checkpoint {
        return Err(PipelineError::InvalidConfig(format!(
            "variant wants a {} base, got {}",
            run.variant.base_checkpoint, base.kind
        )));
    }
    if base.merged {
        return Err(PipelineError::InvalidConfig("base already carries merged adapters".into()));
    }
    Ok(())
}

/// Tunes `base` on `train` as the run's variant prescribes.
pub fn build(
    run: &RunConfig,
    base: &ModelParams,
    train: &Dataset,
    dev: &Dataset,
    aug: Option<&Augmentation>,
) -> Result<TrainedArtifact, PipelineError> {
    run.validate()?;
    check_base(run, base)?;
    let rows = training_rows(run, train, aug)?;
    let mode = InputMode::Standard {
        use_cot: run.variant.use_cot,
    };
    let probe = TrainedArtifact {
        params: base.clone(),
        adapters: None,
        tuning_id: run.tuning.id.clone(),
        instruction: effective_instruction(run),
        mode,
        run: run.clone(),
        curve: Vec::new(),
        best_step: 0,
        steps_run: 0,
    };
    let dev_prompts = artifact_prompts(&probe, dev, aug)?;
    fit(run, base, &rows, dev, &dev_prompts, mode)
}

/// Tunes on rationale and answer targets; the artifact answers from the
/// input alone.
pub fn distilled_cot_build(
    run: &RunConfig,
    base: &ModelParams,
    train: &Dataset,
    dev: &Dataset,
    aug: &Augmentation,
) -> Result<TrainedArtifact, PipelineError> {
    run.validate()?;
    check_base(run, base)?;
    let rows = distilled_rows(run, train, aug)?;
    let instruction = effective_instruction(run);
    let budget = answer_budget(run);
    let dev_prompts = dev
        .examples
        .iter()
        .map(|ex| fit_input(&instruction, ANSWER_PREFIX, ex, None, budget))
        .collect::<Result<Vec<_>, _>>()?;
    fit(run, base, &rows, dev, &dev_prompts, InputMode::Distilled)
}

/// Two-stage inference: a rationale from the oracle when the artifact was
/// built with CoT, then greedy decoding by the tuned model.
pub fn infer(
    artifact: &TrainedArtifact,
    reasoning: &InstructionSet,
    oracle: Option<&Oracle>,
    ex: &Example,
) -> Result<String, PipelineError> {
    let rationale = if artifact.mode.needs_oracle() {
        let oracle = oracle.ok_or_else(|| PipelineError::MissingAugmentation {
            example_id: ex.id.clone(),
        })?;
        let prompt = render_reasoning_prompt(reasoning, &ex.input_text())?;
        let resp = oracle
            .generate(&prompt.text, &default_oracle_decode())
            .map_err(|error| PipelineError::Oracle {
                example_id: ex.id.clone(),
                error,
            })?;
        Some(clean_rationale(&resp.text))
    } else {
        None
    };
    artifact.answer(ex, rationale.as_deref())
}
