//! Adam and plain gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "sgd: {} params, {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Adam over a group of tensors that are always stepped together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub slots: Vec<AdamState>,
}

impl Adam {
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        Adam { slots: lens.into_iter().map(AdamState::new).collect() }
    }

    pub fn with_betas(lens: impl IntoIterator<Item = usize>, beta1: f64, beta2: f64) -> Self {
        let mut a = Adam::new(lens);
        for s in &mut a.slots {
            s.beta1 = beta1;
            s.beta2 = beta2;
        }
        a
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam group: {} slots, {} params, {} grads",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((state, p), g) in self.slots.iter_mut().zip(params).zip(grads) {
            adam_step(state, p, g, lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        sgd_step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn sgd_definition() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[0.5], 0.1).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
        for &g in &[0.3, 2.0, 50.0] {
            let mut p = vec![1.0];
            let mut st = AdamState::new(1);
            adam_step(&mut st, &mut p, &[g], 0.01).unwrap();
            let expected = 1.0 - 0.01 * g / (g + ADAM_EPS);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((1.0 - p[0] - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2);
        assert!(adam_step(&mut st, &mut [0.0, 0.0], &[1.0], 0.1).is_err());
        assert!(sgd_step(&mut [0.0], &[1.0, 2.0], 0.1).is_err());
    }
}
