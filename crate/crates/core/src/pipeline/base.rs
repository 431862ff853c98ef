//! The two base checkpoints: raw pretraining on plain text, then
//! instruction pretraining on top of it. Both are cached on disk, keyed by
//! a hash of everything that determines their weights.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::steps::{full_step, Batcher};
use super::synthetic::{instruction_corpus, raw_corpus};
use super::PipelineError;
use crate::numcore::{AdamConfig, OptimizerState};
use crate::toylm::{load_checkpoint, save_checkpoint, CheckpointKind, ModelConfig, ModelParams, TrainSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub raw_steps: usize,
    pub instruction_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub corpus_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            raw_steps: 150,
            instruction_steps: 1000,
            batch_size: 8,
            lr: 2e-3,
            corpus_size: 8000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaseCheckpoints {
    pub raw: ModelParams,
    pub instruction: ModelParams,
}

impl BaseCheckpoints {
    pub fn get(&self, kind: CheckpointKind) -> &ModelParams {
        match kind {
            CheckpointKind::RawPretrained => &self.raw,
            CheckpointKind::InstructionPretrained => &self.instruction,
        }
    }
}

fn pretrain(
    params: &mut ModelParams,
    corpus: &[TrainSequence],
    steps: usize,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(), PipelineError> {
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(adam, &params.tensors);
    let mut batcher = Batcher::new(corpus.len(), seed);
    for step in 0..steps {
        let batch: Vec<TrainSequence> = batcher
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| corpus[i].clone())
            .collect();
        let loss = full_step(params, &mut opt, &batch, step)?;
        if step % 100 == 0 || step + 1 == steps {
            log::debug!("pretrain {} step {step}: loss {loss:.4}", params.kind);
        }
    }
    Ok(())
}

fn cache_name(model: &ModelConfig, cfg: &PretrainConfig, seed: u64) -> String {
    let key = serde_json::json!({ "model": model, "pretrain": cfg, "seed": seed, "v": 1 });
    hex::encode(&Sha256::digest(key.to_string().as_bytes())[..8])
}

pub fn checkpoint_paths(dir: &Path, model: &ModelConfig, cfg: &PretrainConfig, seed: u64) -> (PathBuf, PathBuf) {
    let name = cache_name(model, cfg, seed);
    (
        dir.join(format!("base-{name}-raw.ckpt")),
        dir.join(format!("base-{name}-instruction.ckpt")),
    )
}

/// Trains both base checkpoints without touching the disk.
pub fn pretrain_bases(model: ModelConfig, cfg: &PretrainConfig, seed: u64) -> Result<BaseCheckpoints, PipelineError> {
    let mut raw = ModelParams::init(model, CheckpointKind::RawPretrained, seed)?;
    let text = raw_corpus(cfg.corpus_size, seed ^ 0x5241_5721);
    pretrain(&mut raw, &text, cfg.raw_steps, cfg, seed)?;
    let mut instruction = raw.clone();
    instruction.kind = CheckpointKind::InstructionPretrained;
    let mixture = instruction_corpus(cfg.corpus_size, seed ^ 0x494e_5354);
    pretrain(&mut instruction, &mixture, cfg.instruction_steps, cfg, seed + 1)?;
    Ok(BaseCheckpoints { raw, instruction })
}

/// Loads cached base checkpoints from `dir`, training and saving them first
/// when missing.
pub fn ensure_base_checkpoints(
    dir: &Path,
    model: ModelConfig,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<BaseCheckpoints, PipelineError> {
    let (raw_path, instr_path) = checkpoint_paths(dir, &model, cfg, seed);
    if raw_path.exists() && instr_path.exists() {
        log::info!("using cached base checkpoints in {}", dir.display());
        return Ok(BaseCheckpoints {
            raw: load_checkpoint(&raw_path)?,
            instruction: load_checkpoint(&instr_path)?,
        });
    }
    log::info!("pretraining base checkpoints into {}", dir.display());
    let bases = pretrain_bases(model, cfg, seed)?;
    // Write under a temporary name so a concurrent reader never sees half a file.
    for (path, params) in [(&raw_path, &bases.raw), (&instr_path, &bases.instruction)] {
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        save_checkpoint(&tmp, params)?;
        std::fs::rename(&tmp, path)?;
    }
    Ok(bases)
}
