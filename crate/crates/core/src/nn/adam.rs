use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(vec![params.len()], vec![grads.len(), state.m.len()]));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        let p = params[i].as_f64() - cfg.learning_rate * mh / (libm::sqrt(vh) + cfg.epsilon);
        params[i] = T::from_f64(p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.5f32, -2.0, 0.25];
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn memoryless_first_step() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-7,
        };
        let g = [0.5f64, -3.0, 1e-3];
        let mut p = vec![0.0f64; 3];
        adam_step(&mut p, &g, &mut AdamState::new(3), &cfg).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert!((pi + 0.1 * gi / (gi.abs() + 1e-7)).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0];
            adam_step(&mut p, &[0.7], &mut s, &cfg).unwrap();
            last = before - p[0];
        }
        assert!((last - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate * 100.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut p = vec![0.0f32; 2];
        assert!(adam_step(&mut p, &[0.0; 3], &mut AdamState::new(2), &AdamConfig::default()).is_err());
    }
}
