//! LoRA adapters over the toy LM.
//!
//! A targeted weight `W [d_out × d_in]` is reparameterised as
//! `W + (alpha / rank) · B · A` with `A [rank × d_in]` and `B [d_out × rank]`.
//! `B` starts at zero so a fresh adapter set leaves the model unchanged, and
//! only `A`/`B` are trained. [`merge`] folds the update back into plain
//! weights so inference needs no adapter code.

mod file;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numcore::{GradTape, NumError, ParamKey, Tensor, Var};
use crate::toylm::{forward, slot, BoundModel, Linear, LmError, LoraBinding, ModelParams};

pub use file::{load_adapters, read_adapters, save_adapters, write_adapters, ADAPTER_MAGIC};

/// Tape keys for adapter tensors start here, clear of base tensor indices.
pub const ADAPTER_KEY_BASE: ParamKey = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum PeftError {
    #[error("rank {rank} must be below {limit} for every targeted matrix")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("invalid adapter config: {0}")]
    InvalidConfig(String),
    #[error("trainable fraction {fraction:.4} exceeds the limit {limit}")]
    TrainableFractionExceeded { fraction: f64, limit: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameters already have adapters merged in")]
    AlreadyMerged,
    #[error("adapters were built for base {expected}, got {actual}")]
    BaseMismatch { expected: String, actual: String },
    #[error("adapter file: {0}")]
    Format(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_max_fraction() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Linear>,
    /// Upper bound on adapter size relative to the base model.
    #[serde(default = "default_max_fraction")]
    pub max_trainable_fraction: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 8.0,
            targets: vec![Linear::Q, Linear::V],
            max_trainable_fraction: default_max_fraction(),
        }
    }
}

impl AdapterConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn validate(&self, params: &ModelParams) -> Result<(), PeftError> {
        if self.rank == 0 {
            return Err(PeftError::InvalidConfig("rank must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PeftError::InvalidConfig("alpha must be positive".into()));
        }
        if self.targets.is_empty() {
            return Err(PeftError::InvalidConfig("no target projections".into()));
        }
        let mut seen = self.targets.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.targets.len() {
            return Err(PeftError::InvalidConfig("duplicate target projection".into()));
        }
        for &t in &self.targets {
            let w = params.linear(0, t);
            let limit = w.shape()[0].min(w.shape()[1]);
            if self.rank >= limit {
                return Err(PeftError::RankTooLarge {
                    rank: self.rank,
                    limit,
                });
            }
        }
        Ok(())
    }
}

/// One low-rank pair attached to `layer`'s `target` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair {
    pub layer: usize,
    pub target: Linear,
    /// `[rank × d_in]`
    pub a: Tensor,
    /// `[d_out × rank]`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSet {
    pub config: AdapterConfig,
    /// Content hash of the base parameters the adapters belong to.
    pub base_hash: String,
    pub seed: u64,
    pub pairs: Vec<LoraPair>,
}

pub const LORA_INIT_STD: f64 = 0.02;

/// `A ~ N(0, 0.02²)`, `B = 0` for every targeted matrix of every layer.
pub fn init_adapters(params: &ModelParams, cfg: &AdapterConfig, seed: u64) -> Result<AdapterSet, PeftError> {
    cfg.validate(params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, LORA_INIT_STD).expect("valid std");
    let mut pairs = Vec::new();
    for layer in 0..params.config.n_layers {
        for &target in &cfg.targets {
            let w = params.linear(layer, target);
            let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
            let a = (0..cfg.rank * d_in).map(|_| normal.sample(&mut rng)).collect();
            pairs.push(LoraPair {
                layer,
                target,
                a: Tensor::new(vec![cfg.rank, d_in], a)?,
                b: Tensor::zeros(&[d_out, cfg.rank]),
            });
        }
    }
    let set = AdapterSet {
        config: cfg.clone(),
        base_hash: params.content_hash(),
        seed,
        pairs,
    };
    let fraction = set.trainable_fraction(params);
    if fraction >= cfg.max_trainable_fraction {
        return Err(PeftError::TrainableFractionExceeded {
            fraction,
            limit: cfg.max_trainable_fraction,
        });
    }
    Ok(set)
}

impl AdapterSet {
    pub fn scale(&self) -> f64 {
        self.config.scale()
    }

    pub fn num_trainable(&self) -> usize {
        self.pairs.iter().map(|p| p.a.numel() + p.b.numel()).sum()
    }

    /// Adapter parameter count over base parameter count.
    pub fn trainable_fraction(&self, params: &ModelParams) -> f64 {
        self.num_trainable() as f64 / params.num_params() as f64
    }

    /// `[A₀, B₀, A₁, B₁, …]`, the order used for tape keys and files.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.pairs.iter().flat_map(|p| [&p.a, &p.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.pairs
            .iter_mut()
            .flat_map(|p| [&mut p.a, &mut p.b])
            .collect()
    }

    /// Records the adapter tensors on `tape` and hooks them into `model`.
    /// Returns the variables in [`AdapterSet::tensors`] order.
    pub fn bind(&self, tape: &mut GradTape, model: &mut BoundModel, trainable: bool) -> Vec<Var> {
        let scale = self.scale();
        let mut vars = Vec::with_capacity(self.pairs.len() * 2);
        for (i, p) in self.pairs.iter().enumerate() {
            let a = tape.param(ADAPTER_KEY_BASE + 2 * i, &p.a, trainable);
            let b = tape.param(ADAPTER_KEY_BASE + 2 * i + 1, &p.b, trainable);
            model.attach_lora(p.layer, p.target, LoraBinding { a, b, scale });
            vars.push(a);
            vars.push(b);
        }
        vars
    }

    /// Dense update `scale · B · A` for one pair.
    pub fn delta(&self, pair: &LoraPair) -> Result<Tensor, PeftError> {
        let ba = pair.b.matmul(&pair.a)?;
        Ok(Tensor::zeros(ba.shape()).add_scaled(&ba, self.scale())?)
    }

    fn check_shapes(&self, params: &ModelParams) -> Result<(), PeftError> {
        for p in &self.pairs {
            if p.layer >= params.config.n_layers {
                return Err(PeftError::ShapeMismatch(format!("layer {} out of range", p.layer)));
            }
            let w = params.linear(p.layer, p.target);
            let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
            let r = self.config.rank;
            if p.a.shape() != [r, d_in] || p.b.shape() != [d_out, r] {
                return Err(PeftError::ShapeMismatch(format!(
                    "layer {} {:?}: A {:?}, B {:?} against W {:?}",
                    p.layer,
                    p.target,
                    p.a.shape(),
                    p.b.shape(),
                    w.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Logits of the base model with every targeted `W` replaced by
/// `W + scale · B · A`, computed without materialising the sum.
pub fn adapted_forward(params: &ModelParams, adapters: &AdapterSet, tokens: &[u32]) -> Result<Tensor, PeftError> {
    adapters.check_shapes(params)?;
    let mut tape = GradTape::new();
    let mut model = BoundModel::bind(&mut tape, params, false);
    adapters.bind(&mut tape, &mut model, false);
    let logits = forward(&mut tape, &model, &[tokens])?;
    Ok(tape.value(logits)?.clone())
}

/// Folds adapters into the weights they were built for.
///
/// Merging is not idempotent (a second merge would add the update twice),
/// so parameters that already carry merged adapters are refused.
pub fn merge(params: &ModelParams, adapters: &AdapterSet) -> Result<ModelParams, PeftError> {
    if params.merged {
        return Err(PeftError::AlreadyMerged);
    }
    let actual = params.content_hash();
    if actual != adapters.base_hash {
        return Err(PeftError::BaseMismatch {
            expected: adapters.base_hash.clone(),
            actual,
        });
    }
    adapters.check_shapes(params)?;
    let mut out = params.clone();
    for p in &adapters.pairs {
        let idx = slot::linear(p.layer, p.target);
        let ba = p.b.matmul(&p.a)?;
        out.tensors[idx] = out.tensors[idx].add_scaled(&ba, adapters.scale())?;
    }
    out.merged = true;
    Ok(out)
}
