//! A small byte-level, pre-norm, decoder-only transformer.

mod checkpoint;
mod decode;
mod model;
pub mod tokenizer;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numcore::{NumError, Tensor};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use decode::{
    continuation_logprob, forward_logits, greedy_continue, greedy_decode, greedy_decode_text, sequence_logprob,
    DecodeParams, Session,
};
pub use model::{forward, sequence_loss, BoundModel, LoraBinding, TrainSequence};
pub use tokenizer::{BOS, BYTE_VOCAB, EOS, PAD};

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("sequence of length {len} exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("reserved token {token} at position {position}")]
    ReservedToken { position: usize, token: u32 },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: BYTE_VOCAB,
            max_seq_len: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let dims = [
            self.n_layers,
            self.d_model,
            self.n_heads,
            self.d_ff,
            self.vocab_size,
            self.max_seq_len,
        ];
        if dims.contains(&0) {
            return Err(LmError::InvalidConfig("all sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(LmError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < BYTE_VOCAB {
            return Err(LmError::InvalidConfig(format!(
                "vocab_size {} is below {BYTE_VOCAB}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Where a set of base weights came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    RawPretrained,
    InstructionPretrained,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RawPretrained => "raw-pretrained",
            Self::InstructionPretrained => "instruction-pretrained",
        })
    }
}

/// The six linear maps of a transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Linear {
    #[serde(rename = "Q")]
    Q,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "V")]
    V,
    #[serde(rename = "O")]
    O,
    #[serde(rename = "FF-in")]
    FfIn,
    #[serde(rename = "FF-out")]
    FfOut,
}

impl Linear {
    pub const ALL: [Linear; 6] = [
        Linear::Q,
        Linear::K,
        Linear::V,
        Linear::O,
        Linear::FfIn,
        Linear::FfOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Linear::Q => "attn.q",
            Linear::K => "attn.k",
            Linear::V => "attn.v",
            Linear::O => "attn.o",
            Linear::FfIn => "ff.in",
            Linear::FfOut => "ff.out",
        }
    }
}

const PER_LAYER: usize = 12;

/// Index of a tensor inside [`ModelParams::tensors`].
///
/// Order: `tok_emb, pos_emb`, then per layer `ln1.g, ln1.b, attn.q, attn.k,
/// attn.v, attn.o, ln2.g, ln2.b, ff.in, ff.in_bias, ff.out, ff.out_bias`,
/// then `ln_f.g, ln_f.b, head`. Linear weights are stored `[d_out × d_in]`.
pub mod slot {
    use super::{Linear, PER_LAYER};

    pub const TOK_EMB: usize = 0;
    pub const POS_EMB: usize = 1;

    fn base(layer: usize) -> usize {
        2 + PER_LAYER * layer
    }
    pub fn ln1_gain(layer: usize) -> usize {
        base(layer)
    }
    pub fn ln1_bias(layer: usize) -> usize {
        base(layer) + 1
    }
    pub fn linear(layer: usize, which: Linear) -> usize {
        base(layer)
            + match which {
                Linear::Q => 2,
                Linear::K => 3,
                Linear::V => 4,
                Linear::O => 5,
                Linear::FfIn => 8,
                Linear::FfOut => 10,
            }
    }
    pub fn ln2_gain(layer: usize) -> usize {
        base(layer) + 6
    }
    pub fn ln2_bias(layer: usize) -> usize {
        base(layer) + 7
    }
    pub fn ff_in_bias(layer: usize) -> usize {
        base(layer) + 9
    }
    pub fn ff_out_bias(layer: usize) -> usize {
        base(layer) + 11
    }
    pub fn ln_f_gain(n_layers: usize) -> usize {
        base(n_layers)
    }
    pub fn ln_f_bias(n_layers: usize) -> usize {
        base(n_layers) + 1
    }
    pub fn head(n_layers: usize) -> usize {
        base(n_layers) + 2
    }
    pub fn count(n_layers: usize) -> usize {
        base(n_layers) + 3
    }
}

/// Names and shapes of every tensor, in storage order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f, v, t) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("pos_emb".to_string(), vec![t, d]),
    ];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.push((p("ln1.g"), vec![d]));
        out.push((p("ln1.b"), vec![d]));
        out.push((p("attn.q"), vec![d, d]));
        out.push((p("attn.k"), vec![d, d]));
        out.push((p("attn.v"), vec![d, d]));
        out.push((p("attn.o"), vec![d, d]));
        out.push((p("ln2.g"), vec![d]));
        out.push((p("ln2.b"), vec![d]));
        out.push((p("ff.in"), vec![f, d]));
        out.push((p("ff.in_bias"), vec![f]));
        out.push((p("ff.out"), vec![d, f]));
        out.push((p("ff.out_bias"), vec![d]));
    }
    out.push(("ln_f.g".to_string(), vec![d]));
    out.push(("ln_f.b".to_string(), vec![d]));
    out.push(("head".to_string(), vec![v, d]));
    out
}

/// Weights of the tunable model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub kind: CheckpointKind,
    pub seed: u64,
    /// Set once adapters have been folded in; a second merge is refused.
    pub merged: bool,
    pub tensors: Vec<Tensor>,
}

pub const INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Gaussian init (std 0.02) for matrices and embeddings, unit gains,
    /// zero biases.
    pub fn init(config: ModelConfig, kind: CheckpointKind, seed: u64) -> Result<Self, LmError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".g") {
                    vec![1.0; n]
                } else if name.ends_with(".b") || name.ends_with("_bias") {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                Tensor::new(shape, data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config,
            kind,
            seed,
            merged: false,
            tensors,
        })
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn linear(&self, layer: usize, which: Linear) -> &Tensor {
        &self.tensors[slot::linear(layer, which)]
    }

    /// SHA-256 over the config and the raw weights, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for t in &self.tensors {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Bit patterns of every weight, for exact equality checks.
    pub fn bits(&self) -> Vec<u64> {
        self.tensors.iter().flat_map(Tensor::bits).collect()
    }
}
