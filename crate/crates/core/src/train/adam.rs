//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_HAT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { beta1: BETA1, beta2: BETA2, eps_hat: EPS_HAT, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam state has {} entries, params {}, grads {}",
            state.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at parameter {i} (value {}) on step {}",
            grads[i],
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps_hat);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut s = AdamState::new(2);
        let mut p = vec![1.0, -2.0];
        adam_step(&mut s, &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = AdamState::new(3);
        let mut p = vec![0.0; 3];
        let lr = 1e-3;
        adam_step(&mut s, &mut p, &[0.5, -20.0, 0.05], lr).unwrap();
        for (v, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * lr).abs() < lr * 1e-6, "{v}");
        }
    }

    #[test]
    fn minimizes_scalar_quadratic() {
        let mut s = AdamState::new(1);
        let mut theta = [0.0];
        for _ in 0..2000 {
            let g = 2.0 * (theta[0] - 3.0);
            adam_step(&mut s, &mut theta, &[g], 0.05).unwrap();
        }
        assert!((theta[0] - 3.0).abs() < 1e-3, "{}", theta[0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = AdamState::new(1);
        let err = adam_step(&mut s, &mut [0.0], &[f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(s.steps(), 0);
    }
}
