use serde::{Deserialize, Serialize};

use super::Array;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment estimates, one pair per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Array>,
    pub second: Vec<Array>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Array]) -> Self {
        let zeros = || params.iter().map(|p| Array::zeros(p.rows(), p.cols())).collect::<Vec<_>>();
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `lr`.
pub fn adam_step(params: &mut [Array], grads: &[Array], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

/// Global-norm clipping. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Array], threshold: f64) -> f64 {
    let norm = grads.iter().map(Array::norm_sq).sum::<f64>().sqrt();
    if norm > threshold && norm > 0.0 {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

/// Step-wise exponential learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 5e-4,
            decay_rate: 0.9,
            decay_steps: 200,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        self.base * self.decay_rate.powi((step / self.decay_steps) as i32)
    }
}
