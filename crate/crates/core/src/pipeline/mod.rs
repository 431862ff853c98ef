//! Model building, two-stage inference, baselines and the ablation suite.

pub mod augment;
pub mod base;
pub mod config;
pub mod experiment;
pub mod icl;
pub mod rundir;
pub mod steps;
pub mod synthetic;
pub mod tuning;

use crate::evalkit::EvalError;
use crate::numcore::NumError;
use crate::oracle::OracleError;
use crate::peft::PeftError;
use crate::prompting::RenderError;
use crate::toylm::LmError;

pub use augment::{augment, clean_rationale, Augmentation, Rationale};
pub use base::{ensure_base_checkpoints, pretrain_bases, BaseCheckpoints, PretrainConfig};
pub use config::{apply_override, DataSource, IclConfig, RunConfig, TrainConfig, Variant};
pub use experiment::{ablation_variants, AblationRow, Experiment, Oracles, TaskData};
pub use icl::{icl_baseline, icl_instruction_set, icl_results, IclAnswer, ICL_MAX_PROMPT_BYTES};
pub use rundir::{load_artifact, save_artifact, RunDir};
pub use tuning::{
    build, distilled_cot_build, distilled_rows, evaluate_artifact, fit_input, infer, predict, training_rows, CurvePoint, Evaluation, InputMode,
    Prediction, TrainedArtifact,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("loss became non-finite at step {step}")]
    DivergedTraining { step: usize },
    #[error("no rationale for example {example_id}")]
    MissingAugmentation { example_id: String },
    #[error("oracle failed on example {example_id}: {error}")]
    Oracle { example_id: String, error: OracleError },
    #[error("artifact not found: {0}")]
    ArtifactNotFound(String),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Peft(#[from] PeftError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Backend(#[from] OracleError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Machine-readable error kind, as printed by the CLI.
    pub fn kind(&self) -> String {
        match self {
            PipelineError::DivergedTraining { .. } => "DivergedTraining".into(),
            PipelineError::MissingAugmentation { .. } => "MissingAugmentation".into(),
            PipelineError::Oracle { error, .. } | PipelineError::Backend(error) => error.kind().into(),
            PipelineError::ArtifactNotFound(_) => "ArtifactNotFound".into(),
            PipelineError::InvalidConfig(_) => "InvalidConfig".into(),
            PipelineError::Render(e) => match e {
                RenderError::RoleMismatch { .. } => "RoleMismatch",
                RenderError::AmbiguousField { .. } => "AmbiguousField",
                _ => "InvalidInstructionSet",
            }
            .into(),
            PipelineError::Lm(LmError::SequenceTooLong { .. }) => "SequenceTooLong".into(),
            PipelineError::Lm(_) => "Model".into(),
            PipelineError::Peft(_) => "Adapter".into(),
            PipelineError::Eval(e) => match e {
                EvalError::SchemaViolation { .. } => "SchemaViolation",
                EvalError::DuplicateId { .. } => "DuplicateId",
                _ => "Evaluation",
            }
            .into(),
            PipelineError::Num(NumError::NonFinite(_)) => "DivergedTraining".into(),
            PipelineError::Num(_) => "Numeric".into(),
            PipelineError::Json(_) => "InvalidJson".into(),
            PipelineError::Io(_) => "Io".into(),
        }
    }
}
