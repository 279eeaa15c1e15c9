use serde::{Deserialize, Serialize};

use crate::graph::Param;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

/// One bias-corrected Adam update of `values` in place. `step` is the
/// 1-based iteration count after incrementing.
pub fn adam_update<S: Scalar>(
    values: &mut [S],
    grad: &[S],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    config: &AdamConfig,
) {
    if moments.first.len() != values.len() {
        moments.first = vec![0.0; values.len()];
        moments.second = vec![0.0; values.len()];
    }
    let c1 = 1.0 - config.beta1.powi(step as i32);
    let c2 = 1.0 - config.beta2.powi(step as i32);
    for (((x, g), m), v) in values
        .iter_mut()
        .zip(grad)
        .zip(&mut moments.first)
        .zip(&mut moments.second)
    {
        let g = g.to_acc();
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let update = lr * (*m / c1) / ((*v / c2).sqrt() + config.epsilon);
        *x = S::from_acc(x.to_acc() - update);
    }
}

/// Applies Adam to every parameter using its accumulated gradient buffer.
/// Parameters without a gradient buffer are treated as having zero gradient.
pub fn adam_step<S: Scalar>(params: &mut [Param<S>], state: &mut AdamState, lr: f64, config: &AdamConfig) {
    state.step += 1;
    state.moments.resize_with(params.len(), Moments::default);
    for (p, moments) in params.iter_mut().zip(&mut state.moments) {
        let grad = match p.tensor.grad() {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); p.tensor.len()],
        };
        adam_update(p.tensor.values_mut(), &grad, moments, state.step, lr, config);
    }
}
