//! On-disk layout of a run:
//!
//! ```text
//! run.json            effective RunConfig
//! augmentation.jsonl  rationales, one per example
//! artifact.json       tuned-model metadata (absent for ICL-only runs)
//! checkpoints/        model.ckpt, plus adapters.lora for PEFT runs
//! curve.csv           step, dev_metric, dev_loss
//! report.json         list of EvalReport
//! table.csv           variant, language, metric, value
//! ```
//!
//! Ablation runs keep one artifact directory per row under `variants/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::Augmentation;
use super::config::RunConfig;
use super::tuning::{CurvePoint, InputMode, TrainedArtifact};
use super::PipelineError;
use crate::evalkit::{table_csv, EvalReport};
use crate::peft::{load_adapters, save_adapters};
use crate::toylm::{load_checkpoint, save_checkpoint};

pub const RUN_JSON: &str = "run.json";
pub const AUGMENTATION_JSONL: &str = "augmentation.jsonl";
pub const ARTIFACT_JSON: &str = "artifact.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const CURVE_CSV: &str = "curve.csv";
pub const REPORT_JSON: &str = "report.json";
pub const TABLE_CSV: &str = "table.csv";

#[derive(Serialize, Deserialize)]
struct ArtifactMeta {
    tuning_id: String,
    instruction: String,
    mode: InputMode,
    best_step: usize,
    steps_run: usize,
    has_adapters: bool,
    curve: Vec<CurvePoint>,
    run: RunConfig,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "dev_metric", "dev_loss"]).expect("in-memory write");
    for p in curve {
        w.write_record([p.step.to_string(), p.dev_metric.to_string(), p.dev_loss.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(path)?;
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn write_config(&self, run: &RunConfig) -> Result<(), PipelineError> {
        std::fs::write(self.path.join(RUN_JSON), run.to_json() + "\n")?;
        Ok(())
    }

    pub fn write_augmentation(&self, aug: &Augmentation) -> Result<(), PipelineError> {
        aug.save(&self.path.join(AUGMENTATION_JSONL))
    }

    pub fn write_reports(&self, reports: &[EvalReport]) -> Result<(), PipelineError> {
        std::fs::write(self.path.join(REPORT_JSON), serde_json::to_string_pretty(reports)? + "\n")?;
        std::fs::write(self.path.join(TABLE_CSV), table_csv(reports))?;
        Ok(())
    }

    /// Saves an artifact into this directory (or `sub` below it).
    pub fn write_artifact(&self, artifact: &TrainedArtifact) -> Result<(), PipelineError> {
        save_artifact(&self.path, artifact)
    }

    pub fn subdir(&self, name: &str) -> Result<RunDir, PipelineError> {
        RunDir::create(&self.path.join(name))
    }
}

/// Directory-safe form of a row name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

pub fn save_artifact(dir: &Path, artifact: &TrainedArtifact) -> Result<(), PipelineError> {
    let ckpt = dir.join(CHECKPOINTS);
    std::fs::create_dir_all(&ckpt)?;
    save_checkpoint(&ckpt.join("model.ckpt"), &artifact.params)?;
    if let Some(a) = &artifact.adapters {
        save_adapters(&ckpt.join("adapters.lora"), a)?;
    }
    let meta = ArtifactMeta {
        tuning_id: artifact.tuning_id.clone(),
        instruction: artifact.instruction.clone(),
        mode: artifact.mode,
        best_step: artifact.best_step,
        steps_run: artifact.steps_run,
        has_adapters: artifact.adapters.is_some(),
        curve: artifact.curve.clone(),
        run: artifact.run.clone(),
    };
    std::fs::write(dir.join(ARTIFACT_JSON), serde_json::to_string_pretty(&meta)? + "\n")?;
    std::fs::write(dir.join(CURVE_CSV), curve_csv(&artifact.curve))?;
    Ok(())
}

pub fn load_artifact(dir: &Path) -> Result<TrainedArtifact, PipelineError> {
    let meta_path = dir.join(ARTIFACT_JSON);
    if !meta_path.is_file() {
        return Err(PipelineError::ArtifactNotFound(dir.display().to_string()));
    }
    let meta: ArtifactMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    let ckpt = dir.join(CHECKPOINTS);
    let params = load_checkpoint(&ckpt.join("model.ckpt"))?;
    let adapters = if meta.has_adapters {
        Some(load_adapters(&ckpt.join("adapters.lora"))?)
    } else {
        None
    };
    Ok(TrainedArtifact {
        params,
        adapters,
        tuning_id: meta.tuning_id,
        instruction: meta.instruction,
        mode: meta.mode,
        run: meta.run,
        curve: meta.curve,
        best_step: meta.best_step,
        steps_run: meta.steps_run,
    })
}
