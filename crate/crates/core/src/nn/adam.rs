use serde::{Deserialize, Serialize};

use super::ParamMut;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` from their accumulated grads.
/// Moment buffers are created on first use and must keep matching shapes.
pub fn adam_step(params: &mut [ParamMut<'_>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.value.len() != p.grad.len() || p.value.len() != state.m[i].len() {
            return Err(Error::shape(format!("parameter {} changed shape", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.value.len() {
            let g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p.value[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(x: &mut [f64], g: &mut [f64], state: &mut AdamState, cfg: &AdamConfig) {
        let mut params = [ParamMut {
            name: "x".into(),
            shape: vec![x.len()],
            value: x,
            grad: g,
        }];
        adam_step(&mut params, state, cfg).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut x = [1.5, -2.0];
        let mut g = [0.0, 0.0];
        let mut s = AdamState::new();
        step(&mut x, &mut g, &mut s, &AdamConfig::default());
        assert_eq!(x, [1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = [3.0];
        let mut g = [1.0];
        let mut s = AdamState::new();
        step(&mut x, &mut g, &mut s, &AdamConfig::with_lr(0.1));
        assert!((x[0] - 2.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic_bowl() {
        let mut x = [1.0, -0.5];
        let mut s = AdamState::new();
        let cfg = AdamConfig::with_lr(0.05);
        for _ in 0..500 {
            let mut g = [2.0 * x[0], 2.0 * x[1]];
            step(&mut x, &mut g, &mut s, &cfg);
        }
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut s = AdamState::new();
        let mut x = [0.0; 2];
        let mut g = [1.0; 2];
        step(&mut x, &mut g, &mut s, &AdamConfig::default());
        let mut y = [0.0; 3];
        let mut gy = [1.0; 3];
        let mut params = [ParamMut {
            name: "x".into(),
            shape: vec![3],
            value: &mut y,
            grad: &mut gy,
        }];
        assert!(adam_step(&mut params, &mut s, &AdamConfig::default()).is_err());
    }
}
