use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for an ordered list of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl OptimizerState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = m.clone();
        Self { config, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update applied in place.
    ///
    /// Fails without touching anything on a shape mismatch, and with
    /// `NonFinite` if the update produced NaN or infinity.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), NumError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumError::LengthMismatch {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                pd[j] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
            if !p.is_finite() {
                return Err(NumError::NonFinite(format!(
                    "parameter {i} after adam step {}",
                    self.t
                )));
            }
        }
        Ok(())
    }
}

/// Functional form: returns updated copies of `params`.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &[Tensor],
    grads: &[Tensor],
) -> Result<Vec<Tensor>, NumError> {
    let mut out: Vec<Tensor> = params.to_vec();
    let mut refs: Vec<&mut Tensor> = out.iter_mut().collect();
    let grefs: Vec<&Tensor> = grads.iter().collect();
    state.step(&mut refs, &grefs)?;
    Ok(out)
}
