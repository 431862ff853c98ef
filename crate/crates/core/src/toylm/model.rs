use std::collections::BTreeMap;

use super::{slot, Linear, LmError, ModelConfig, ModelParams};
use crate::numcore::{GradTape, Var};

/// A low-rank update attached to one linear map: `y += scale·(x·Aᵀ)·Bᵀ`.
#[derive(Clone, Copy, Debug)]
pub struct LoraBinding {
    pub a: Var,
    pub b: Var,
    pub scale: f64,
}

/// Model weights recorded on a tape, ready for a forward pass.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub config: ModelConfig,
    vars: Vec<Var>,
    lora: BTreeMap<(usize, Linear), LoraBinding>,
}

impl BoundModel {
    /// Records every tensor of `params`; tape parameter keys are the tensor
    /// indices in storage order.
    pub fn bind(tape: &mut GradTape, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t, trainable))
            .collect();
        Self {
            config: params.config,
            vars,
            lora: BTreeMap::new(),
        }
    }

    pub fn attach_lora(&mut self, layer: usize, which: Linear, binding: LoraBinding) {
        self.lora.insert((layer, which), binding);
    }

    pub fn var(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    fn linear(&self, tape: &mut GradTape, layer: usize, which: Linear, x: Var) -> Result<Var, LmError> {
        let y = tape.matmul_nt(x, self.vars[slot::linear(layer, which)])?;
        match self.lora.get(&(layer, which)) {
            Some(l) => {
                let xa = tape.matmul_nt(x, l.a)?;
                let xab = tape.matmul_nt(xa, l.b)?;
                let scaled = tape.scale(xab, l.scale)?;
                Ok(tape.add(y, scaled)?)
            }
            None => Ok(y),
        }
    }
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<(), LmError> {
    if tokens.len() > cfg.max_seq_len {
        return Err(LmError::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some((position, &token)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &t)| t as usize >= cfg.vocab_size)
    {
        return Err(LmError::ReservedToken { position, token });
    }
    Ok(())
}

/// Logits for a batch of independent sequences, stacked row-wise:
/// `[Σ len × vocab]`.
pub fn forward(tape: &mut GradTape, model: &BoundModel, seqs: &[&[u32]]) -> Result<Var, LmError> {
    let cfg = model.config;
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut segments = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.is_empty() {
            return Err(LmError::InvalidConfig("empty sequence".into()));
        }
        check_tokens(&cfg, s)?;
        segments.push((tokens.len(), s.len()));
        tokens.extend(s.iter().map(|&t| t as usize));
        positions.extend(0..s.len());
    }
    let tok = tape.gather(model.var(slot::TOK_EMB), &tokens)?;
    let pos = tape.gather(model.var(slot::POS_EMB), &positions)?;
    let mut x = tape.add(tok, pos)?;
    for l in 0..cfg.n_layers {
        let h = tape.layer_norm(x, model.var(slot::ln1_gain(l)), model.var(slot::ln1_bias(l)))?;
        let q = model.linear(tape, l, Linear::Q, h)?;
        let k = model.linear(tape, l, Linear::K, h)?;
        let v = model.linear(tape, l, Linear::V, h)?;
        let att = tape.causal_attention(q, k, v, cfg.n_heads, &segments)?;
        let o = model.linear(tape, l, Linear::O, att)?;
        x = tape.add(x, o)?;
        let h2 = tape.layer_norm(x, model.var(slot::ln2_gain(l)), model.var(slot::ln2_bias(l)))?;
        let f = model.linear(tape, l, Linear::FfIn, h2)?;
        let f = tape.add_row(f, model.var(slot::ff_in_bias(l)))?;
        let f = tape.gelu(f)?;
        let f = model.linear(tape, l, Linear::FfOut, f)?;
        let f = tape.add_row(f, model.var(slot::ff_out_bias(l)))?;
        x = tape.add(x, f)?;
    }
    let n = cfg.n_layers;
    let x = tape.layer_norm(x, model.var(slot::ln_f_gain(n)), model.var(slot::ln_f_bias(n)))?;
    Ok(tape.matmul_nt(x, model.var(slot::head(n)))?)
}

/// A token sequence whose tokens from `target_start` on are prediction
/// targets; earlier tokens only condition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub target_start: usize,
}

impl TrainSequence {
    /// `BOS + prompt + target + EOS`, with the loss on `target + EOS`.
    pub fn from_pair(prompt: &[u8], target: &[u8]) -> Self {
        let mut tokens = super::tokenizer::encode_prompt(prompt);
        let target_start = tokens.len();
        tokens.extend(target.iter().map(|&b| u32::from(b)));
        tokens.push(super::EOS);
        Self {
            tokens,
            target_start,
        }
    }

    /// Plain language modelling: every token after BOS is a target.
    pub fn full(text: &[u8]) -> Self {
        Self {
            tokens: super::tokenizer::tokenize(text),
            target_start: 1,
        }
    }
}

/// Mean next-token cross-entropy over the target tokens of a batch.
pub fn sequence_loss(
    tape: &mut GradTape,
    model: &BoundModel,
    batch: &[TrainSequence],
) -> Result<Var, LmError> {
    let seqs: Vec<&[u32]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
    let logits = forward(tape, model, &seqs)?;
    let mut targets = Vec::new();
    for s in batch {
        let len = s.tokens.len();
        for p in 0..len {
            let next = p + 1;
            targets.push(if next < len && next >= s.target_start.max(1) {
                Some(s.tokens[next] as usize)
            } else {
                None
            });
        }
    }
    Ok(tape.cross_entropy(logits, &targets)?)
}
