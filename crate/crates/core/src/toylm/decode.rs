use serde::{Deserialize, Serialize};

use super::model::{check_tokens, forward, BoundModel};
use super::{slot, tokenizer, Linear, LmError, ModelParams};
use crate::numcore::kernels;
use crate::numcore::{GradTape, Tensor};

/// Greedy decoding limits. Decoding is always argmax (temperature 0).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl DecodeParams {
    pub fn new(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            stop: Vec::new(),
        }
    }

    pub fn with_stop(mut self, stop: impl Into<String>) -> Self {
        self.stop.push(stop.into());
        self
    }
}

/// Full-sequence logits `[len × vocab]` through the tape forward pass.
pub fn forward_logits(params: &ModelParams, tokens: &[u32]) -> Result<Tensor, LmError> {
    let mut tape = GradTape::new();
    let model = BoundModel::bind(&mut tape, params, false);
    let logits = forward(&mut tape, &model, &[tokens])?;
    Ok(tape.value(logits)?.clone())
}

/// Incremental inference with cached keys and values.
///
/// Produces the same logits, bit for bit, as [`forward_logits`] on the
/// concatenation of everything fed so far. Cloning forks the cache, which
/// lets several continuations share one prompt.
#[derive(Clone)]
pub struct Session<'a> {
    params: &'a ModelParams,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let n = params.config.n_layers;
        Self {
            params,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn lin(&self, x: &[f64], rows: usize, layer: usize, which: Linear) -> Vec<f64> {
        let w = self.params.linear(layer, which);
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        kernels::matmul_nt(x, rows, inp, w.data(), out)
    }

    /// Appends `tokens`; returns logits for every new position
    /// (`all_rows`) or only the last one.
    pub fn feed(&mut self, tokens: &[u32], all_rows: bool) -> Result<Vec<f64>, LmError> {
        let p = self.params;
        let cfg = p.config;
        if tokens.is_empty() {
            return Err(LmError::InvalidConfig("nothing to feed".into()));
        }
        check_tokens(&cfg, tokens)?;
        if self.len + tokens.len() > cfg.max_seq_len {
            return Err(LmError::SequenceTooLong {
                len: self.len + tokens.len(),
                max: cfg.max_seq_len,
            });
        }
        let (d, rows) = (cfg.d_model, tokens.len());
        let tok = p.tensors[slot::TOK_EMB].data();
        let pos = p.tensors[slot::POS_EMB].data();
        let mut x = vec![0.0; rows * d];
        for (r, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            let pr = self.len + r;
            for j in 0..d {
                x[r * d + j] = tok[t * d + j] + pos[pr * d + j];
            }
        }
        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let ln = |x: &[f64], g: usize, b: usize| -> Vec<f64> {
            let mut out = vec![0.0; x.len()];
            for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
                kernels::layer_norm_row(xr, p.tensors[g].data(), p.tensors[b].data(), or);
            }
            out
        };
        let add_bias = |v: &mut [f64], b: usize| {
            let bias = p.tensors[b].data();
            for row in v.chunks_mut(bias.len()) {
                for (a, c) in row.iter_mut().zip(bias) {
                    *a += c;
                }
            }
        };
        for l in 0..cfg.n_layers {
            let h = ln(&x, slot::ln1_gain(l), slot::ln1_bias(l));
            let q = self.lin(&h, rows, l, Linear::Q);
            let k = self.lin(&h, rows, l, Linear::K);
            let v = self.lin(&h, rows, l, Linear::V);
            self.keys[l].extend_from_slice(&k);
            self.values[l].extend_from_slice(&v);
            let (kc, vc) = (&self.keys[l], &self.values[l]);
            let mut att = vec![0.0; rows * d];
            let mut probs = Vec::with_capacity(self.len + rows);
            for r in 0..rows {
                let i = self.len + r;
                for h in 0..heads {
                    let col = h * dh;
                    let qi = &q[r * d + col..r * d + col + dh];
                    probs.clear();
                    for j in 0..=i {
                        probs.push(kernels::dot(qi, &kc[j * d + col..j * d + col + dh]) * scale);
                    }
                    kernels::softmax_in_place(&mut probs);
                    let oi = &mut att[r * d + col..r * d + col + dh];
                    for (j, &pj) in probs.iter().enumerate() {
                        for (o, x) in oi.iter_mut().zip(&vc[j * d + col..j * d + col + dh]) {
                            *o += pj * x;
                        }
                    }
                }
            }
            let o = self.lin(&att, rows, l, Linear::O);
            for (a, b) in x.iter_mut().zip(&o) {
                *a += b;
            }
            let h2 = ln(&x, slot::ln2_gain(l), slot::ln2_bias(l));
            let mut f = self.lin(&h2, rows, l, Linear::FfIn);
            add_bias(&mut f, slot::ff_in_bias(l));
            for v in f.iter_mut() {
                *v = kernels::gelu(*v);
            }
            let mut f = self.lin(&f, rows, l, Linear::FfOut);
            add_bias(&mut f, slot::ff_out_bias(l));
            for (a, b) in x.iter_mut().zip(&f) {
                *a += b;
            }
        }
        self.len += rows;
        let n = cfg.n_layers;
        let keep = if all_rows { 0 } else { rows - 1 };
        let xf = ln(&x[keep * d..], slot::ln_f_gain(n), slot::ln_f_bias(n));
        let head = &p.tensors[slot::head(n)];
        Ok(kernels::matmul_nt(
            &xf,
            rows - keep,
            d,
            head.data(),
            cfg.vocab_size,
        ))
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy continuation of `prompt` (which should start with BOS).
///
/// Stops at EOS (or any other reserved token), when the output ends with a
/// stop sequence (which is removed), or after `max_new_tokens`.
pub fn greedy_decode(params: &ModelParams, prompt: &[u32], dp: &DecodeParams) -> Result<Vec<u8>, LmError> {
    let max = params.config.max_seq_len;
    if prompt.len() + dp.max_new_tokens > max {
        return Err(LmError::SequenceTooLong {
            len: prompt.len() + dp.max_new_tokens,
            max,
        });
    }
    check_tokens(&params.config, prompt)?;
    if dp.max_new_tokens == 0 {
        return Ok(Vec::new());
    }
    let mut session = Session::new(params);
    let logits = session.feed(prompt, false)?;
    greedy_continue(&mut session, logits, dp)
}

/// Greedy decoding from a session whose next-token logits are `logits`.
pub fn greedy_continue(session: &mut Session<'_>, mut logits: Vec<f64>, dp: &DecodeParams) -> Result<Vec<u8>, LmError> {
    let mut out = Vec::new();
    if dp.max_new_tokens == 0 {
        return Ok(out);
    }
    loop {
        let next = argmax(&logits) as u32;
        if tokenizer::is_reserved(next) {
            break;
        }
        out.push(next as u8);
        if let Some(stop) = dp
            .stop
            .iter()
            .map(String::as_bytes)
            .find(|s| !s.is_empty() && out.ends_with(s))
        {
            out.truncate(out.len() - stop.len());
            break;
        }
        if out.len() >= dp.max_new_tokens {
            break;
        }
        logits = session.feed(&[next], false)?;
    }
    Ok(out)
}

/// Log-probability of `continuation` after the state held by `session`,
/// whose next-token logits are `logits`. The session itself is untouched.
pub fn continuation_logprob(session: &Session<'_>, logits: &[f64], continuation: &[u32]) -> Result<f64, LmError> {
    let Some((&first, rest)) = continuation.split_first() else {
        return Ok(0.0);
    };
    let mut lp = kernels::log_softmax_at(logits, first as usize);
    if rest.is_empty() {
        return Ok(lp);
    }
    let mut fork = session.clone();
    let rows = fork.feed(&continuation[..continuation.len() - 1], true)?;
    let v = logits.len();
    for (i, &t) in rest.iter().enumerate() {
        lp += kernels::log_softmax_at(&rows[i * v..(i + 1) * v], t as usize);
    }
    Ok(lp)
}

/// Text-in, text-out convenience wrapper around [`greedy_decode`].
pub fn greedy_decode_text(params: &ModelParams, prompt: &str, dp: &DecodeParams) -> Result<String, LmError> {
    let tokens = tokenizer::encode_prompt(prompt.as_bytes());
    let bytes = greedy_decode(params, &tokens, dp)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// `Σ log P(continuation_i | prompt, continuation_<i)`; zero for an empty
/// continuation.
pub fn sequence_logprob(params: &ModelParams, prompt: &[u32], continuation: &[u32]) -> Result<f64, LmError> {
    let total = prompt.len() + continuation.len();
    if total > params.config.max_seq_len {
        return Err(LmError::SequenceTooLong {
            len: total,
            max: params.config.max_seq_len,
        });
    }
    if prompt.is_empty() {
        return Err(LmError::InvalidConfig("prompt must not be empty".into()));
    }
    if continuation.is_empty() {
        check_tokens(&params.config, prompt)?;
        return Ok(0.0);
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(continuation);
    let mut session = Session::new(params);
    // Only rows from the last prompt position on are needed.
    let split = prompt.len() - 1;
    if split > 0 {
        session.feed(&tokens[..split], false)?;
    }
    let rows = session.feed(&tokens[split..total - 1], true)?;
    let v = params.config.vocab_size;
    let mut lp = 0.0;
    for (i, &t) in continuation.iter().enumerate() {
        lp += kernels::log_softmax_at(&rows[i * v..(i + 1) * v], t as usize);
    }
    Ok(lp)
}
