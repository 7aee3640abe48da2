use alloc::vec;
use alloc::vec::Vec;

use super::TrainError;
use crate::math;
use crate::tensor::{Tensor, TensorError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advance the step counter; call once per optimizer step before
    /// [`AdamState::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of slot `i` in place.
    pub fn update(&mut self, i: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
        let c2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..param.len() {
            let g = grad[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            param[j] -= lr * mh / (math::sqrt(vh) + ADAM_EPS);
        }
    }
}

/// One Adam step as a pure function of `(params, grads, state)`.
pub fn optimizer_step(
    params: &[Tensor],
    grads: &[Tensor],
    state: &AdamState,
    lr: f64,
) -> Result<(Vec<Tensor>, AdamState), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Tensor(TensorError::Invalid {
            op: "optimizer_step",
            reason: "params, grads and state disagree in length",
        }));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.len() != m.len() {
            return Err(TrainError::Tensor(TensorError::ShapeMismatch {
                op: "optimizer_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            }));
        }
    }
    let mut next = state.clone();
    next.begin_step();
    let mut out = params.to_vec();
    for (i, (p, g)) in out.iter_mut().zip(grads).enumerate() {
        next.update(i, p.data_mut(), g.data(), lr);
    }
    Ok((out, next))
}
