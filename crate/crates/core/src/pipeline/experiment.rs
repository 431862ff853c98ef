//! Wiring a run config to data, oracles and base checkpoints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::augment::{augment, Augmentation};
use super::base::{ensure_base_checkpoints, BaseCheckpoints};
use super::config::{DataSource, RunConfig, Variant};
use super::icl::{icl_instruction_set, icl_results};
use super::synthetic::leak_dataset;
use super::tuning::{build, distilled_cot_build, evaluate_artifact, TrainedArtifact};
use super::PipelineError;
use crate::evalkit::{load_jsonl, make_report, Dataset, EvalReport, Example, ReportOptions, Split};
use crate::oracle::{BackendConfig, BackendKind, MockBackend, MockPolicy, Oracle, ResponseCache};

#[derive(Clone, Debug)]
pub struct TaskData {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Option<Dataset>,
}

impl TaskData {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        match &cfg.data {
            DataSource::Synthetic { n_train, n_dev, n_test } => Ok(Self {
                train: leak_dataset(Split::Train, *n_train, cfg.seed),
                dev: leak_dataset(Split::Validation, *n_dev, cfg.seed),
                test: (*n_test > 0).then(|| leak_dataset(Split::Test, *n_test, cfg.seed)),
            }),
            DataSource::Files {
                task,
                train,
                validation,
                test,
            } => Ok(Self {
                train: load_jsonl(train, *task, Split::Train)?,
                dev: load_jsonl(validation, *task, Split::Validation)?,
                test: test
                    .as_ref()
                    .map(|p| load_jsonl(p, *task, Split::Test))
                    .transpose()?,
            }),
        }
    }

    pub fn split(&self, split: Split) -> Result<&Dataset, PipelineError> {
        match split {
            Split::Train => Ok(&self.train),
            Split::Validation => Ok(&self.dev),
            Split::Test => self
                .test
                .as_ref()
                .ok_or_else(|| PipelineError::InvalidConfig("the run has no test split".into())),
        }
    }

    pub fn all_examples(&self) -> Vec<Example> {
        let mut v = self.train.examples.clone();
        v.extend(self.dev.examples.iter().cloned());
        if let Some(t) = &self.test {
            v.extend(t.examples.iter().cloned());
        }
        v
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.all_examples().into_iter().map(|e| e.language).collect()
    }
}

/// The oracle used for rationales and the one used for the ICL baseline.
/// For HTTP backends both talk to the same endpoint.
pub struct Oracles {
    pub reasoning: Oracle,
    pub icl: Oracle,
}

impl Oracles {
    /// Mock oracles know every example so they can leak labels; the policy
    /// parameters go into the model name and so into cache keys.
    pub fn from_config(cfg: &RunConfig, examples: &[Example], cache_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let cache = || cache_dir.map(|d| ResponseCache::new(d.join("oracle")));
        match cfg.backend.kind {
            BackendKind::Http => Ok(Self {
                reasoning: Oracle::from_config(cfg.backend.clone(), cache())?,
                icl: Oracle::from_config(cfg.backend.clone(), cache())?,
            }),
            BackendKind::Mock => {
                let named = |model: String| BackendConfig {
                    model,
                    ..cfg.backend.clone()
                };
                let rationales = MockPolicy::rationales(examples, cfg.leak_strength, cfg.seed);
                Ok(Self {
                    reasoning: Oracle::with_backend(
                        named(format!("mock-rationales(leak={},seed={})", cfg.leak_strength, cfg.seed)),
                        Box::new(MockBackend::new(rationales)),
                        cache(),
                    ),
                    icl: Oracle::with_backend(
                        named("mock-icl-majority".into()),
                        Box::new(MockBackend::new(MockPolicy::IclMajority)),
                        cache(),
                    ),
                })
            }
        }
    }

    pub fn backend_calls(&self) -> usize {
        self.reasoning.backend_calls() + self.icl.backend_calls()
    }
}

/// One ablation row: the variant, the exact config it ran with and its report.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub run: RunConfig,
    pub artifact: TrainedArtifact,
    pub report: EvalReport,
}

/// Row names and variants of the cumulative ablation, top to bottom.
pub fn ablation_variants() -> Vec<(&'static str, Variant)> {
    let mut v = Variant::FIAT;
    let mut out = vec![("FIAT", v)];
    v.use_cot = false;
    out.push(("w/o CoT-augmented tuning", v));
    v.use_instructions = false;
    out.push(("w/o instruction-augmented tuning", v));
    v.use_peft = false;
    out.push(("w/o parameter-efficient tuning", v));
    v.base_checkpoint = crate::toylm::CheckpointKind::RawPretrained;
    out.push(("w/o instruction-tuned base", v));
    out
}

pub struct Experiment {
    pub run: RunConfig,
    pub data: TaskData,
    pub oracles: Oracles,
    /// Holds base checkpoints and the oracle response cache.
    pub cache_dir: PathBuf,
}

impl Experiment {
    pub fn new(run: RunConfig, cache_dir: &Path) -> Result<Self, PipelineError> {
        run.validate()?;
        let data = TaskData::load(&run)?;
        let oracles = Oracles::from_config(&run, &data.all_examples(), Some(cache_dir))?;
        Ok(Self {
            run,
            data,
            oracles,
            cache_dir: cache_dir.to_path_buf(),
        })
    }

    pub fn bases(&self) -> Result<BaseCheckpoints, PipelineError> {
        ensure_base_checkpoints(
            &self.cache_dir.join("checkpoints"),
            self.run.model,
            &self.run.pretrain,
            self.run.seed,
        )
    }

    /// Rationales for every split the run has.
    pub fn augment_all(&self) -> Result<Augmentation, PipelineError> {
        let mut aug = augment(&self.data.train, &self.run.reasoning, &self.oracles.reasoning)?;
        aug.extend(augment(&self.data.dev, &self.run.reasoning, &self.oracles.reasoning)?);
        if let Some(t) = &self.data.test {
            aug.extend(augment(t, &self.run.reasoning, &self.oracles.reasoning)?);
        }
        Ok(aug)
    }

    fn run_for(&self, variant: Variant) -> RunConfig {
        self.run.with_variant(variant)
    }

    pub fn build(&self, variant: Variant, bases: &BaseCheckpoints, aug: &Augmentation) -> Result<TrainedArtifact, PipelineError> {
        let run = self.run_for(variant);
        build(&run, bases.get(variant.base_checkpoint), &self.data.train, &self.data.dev, Some(aug))
    }

    pub fn build_distilled(&self, bases: &BaseCheckpoints, aug: &Augmentation) -> Result<TrainedArtifact, PipelineError> {
        let run = self.run_for(Variant::FIAT);
        distilled_cot_build(&run, bases.get(run.variant.base_checkpoint), &self.data.train, &self.data.dev, aug)
    }

    pub fn report(&self, name: &str, results: &[crate::evalkit::ExampleResult]) -> Result<EvalReport, PipelineError> {
        Ok(make_report(
            name,
            self.data.train.kind,
            results,
            &self.data.languages(),
            &ReportOptions::default(),
        )?)
    }

    pub fn evaluate(&self, name: &str, artifact: &TrainedArtifact, split: Split, aug: &Augmentation) -> Result<EvalReport, PipelineError> {
        let ev = evaluate_artifact(artifact, self.data.split(split)?, Some(aug))?;
        self.report(name, &ev.results)
    }

    pub fn icl(&self, split: Split, aug: &Augmentation) -> Result<EvalReport, PipelineError> {
        let iset = icl_instruction_set(&self.run.icl, &self.data.train, Some(aug));
        let results = icl_results(&iset, &self.oracles.icl, self.data.split(split)?)?;
        self.report("ICL", &results)
    }

    /// The five cumulative-removal rows, each built and evaluated on `split`.
    pub fn ablation(&self, bases: &BaseCheckpoints, aug: &Augmentation, split: Split) -> Result<Vec<AblationRow>, PipelineError> {
        ablation_variants()
            .into_iter()
            .map(|(name, variant)| {
                let artifact = self.build(variant, bases, aug)?;
                let report = self.evaluate(name, &artifact, split, aug)?;
                Ok(AblationRow {
                    name: name.to_string(),
                    run: self.run_for(variant),
                    artifact,
                    report,
                })
            })
            .collect()
    }
}
