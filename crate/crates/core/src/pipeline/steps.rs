//! Single optimisation steps and batch scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::numcore::{GradTape, OptimizerState, Tensor};
use crate::peft::{AdapterSet, ADAPTER_KEY_BASE};
use crate::toylm::{sequence_loss, BoundModel, ModelParams, TrainSequence};

/// Epoch-wise shuffled mini-batches; the order depends only on the seed.
pub struct Batcher {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.n) {
            if self.pos == self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn loss_value(tape: &GradTape, loss: crate::numcore::Var, step: usize) -> Result<f64, PipelineError> {
    let v = tape.value(loss)?.data()[0];
    if !v.is_finite() {
        return Err(PipelineError::DivergedTraining { step });
    }
    Ok(v)
}

fn diverged(step: usize) -> impl Fn(crate::numcore::NumError) -> PipelineError {
    move |e| match e {
        crate::numcore::NumError::NonFinite(_) => PipelineError::DivergedTraining { step },
        other => other.into(),
    }
}

/// Updates every base weight; returns the batch loss.
pub fn full_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[TrainSequence],
    step: usize,
) -> Result<f64, PipelineError> {
    let mut tape = GradTape::new();
    let model = BoundModel::bind(&mut tape, params, true);
    let loss = sequence_loss(&mut tape, &model, batch)?;
    let value = loss_value(&tape, loss, step)?;
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| grads.take(i).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut refs: Vec<&mut Tensor> = params.tensors.iter_mut().collect();
    let grefs: Vec<&Tensor> = grads.iter().collect();
    opt.step(&mut refs, &grefs).map_err(diverged(step))?;
    Ok(value)
}

/// Updates only the adapter tensors; `base` stays bit-identical.
pub fn adapter_step(
    base: &ModelParams,
    adapters: &mut AdapterSet,
    opt: &mut OptimizerState,
    batch: &[TrainSequence],
    step: usize,
) -> Result<f64, PipelineError> {
    let mut tape = GradTape::new();
    let mut model = BoundModel::bind(&mut tape, base, false);
    adapters.bind(&mut tape, &mut model, true);
    let loss = sequence_loss(&mut tape, &model, batch)?;
    let value = loss_value(&tape, loss, step)?;
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = adapters
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            grads
                .take(ADAPTER_KEY_BASE + i)
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    let mut refs = adapters.tensors_mut();
    let grefs: Vec<&Tensor> = grads.iter().collect();
    opt.step(&mut refs, &grefs).map_err(diverged(step))?;
    Ok(value)
}
