//! Adamax: Adam with an infinity-norm second moment.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// First moment.
    pub m: Vec<f64>,
    /// Exponentially weighted infinity norm.
    pub u: Vec<f64>,
    /// Number of applied updates.
    pub t: u64,
    /// Updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            u: vec![0.0; len],
            t: 0,
            skipped: 0,
        }
    }
}

/// One Adamax update of `params` in place. Returns `false` (and leaves
/// everything but the skip counter untouched) if `grads` is not finite.
pub fn adamax_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grads: &[f64],
    cfg: &AdamaxConfig,
) -> Result<bool> {
    check_len("optimizer moments", params.len(), state.m.len())?;
    check_len("gradient", params.len(), grads.len())?;
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!("non-finite gradient, skipping update ({} skipped so far)", state.skipped);
        return Ok(false);
    }
    state.t += 1;
    let step = cfg.lr / (1.0 - cfg.beta1.powi(state.t as i32));
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.u[i] = (cfg.beta2 * state.u[i]).max(g.abs());
        params[i] -= step * state.m[i] / (state.u[i] + cfg.eps);
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut s = OptimizerState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        adamax_step(&mut s, &mut p, &[0.0; 3], &AdamaxConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        // With g constant: m_t = (1-β1^t) g and u_t = |g|, so each step is
        // lr·g/(|g|+ε) exactly.
        let cfg = AdamaxConfig::default();
        let mut s = OptimizerState::new(2);
        let mut p = vec![0.0, 0.0];
        let g = [0.3, -2.0];
        for _ in 0..50 {
            let before = p.clone();
            adamax_step(&mut s, &mut p, &g, &cfg).unwrap();
            for i in 0..2 {
                let expected = -cfg.lr * g[i] / (g[i].abs() + cfg.eps);
                assert!((p[i] - before[i] - expected).abs() < 1e-12 * cfg.lr);
            }
        }
        assert_eq!(s.t, 50);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamaxConfig::default();
        let mut s = OptimizerState::new(1);
        let mut p = vec![1.0];
        adamax_step(&mut s, &mut p, &[0.5], &cfg).unwrap();
        // m = 0.05, u = 0.5, step = lr/0.1.
        let expected = 1.0 - (0.01 / (1.0 - 0.9)) * 0.05 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((s.m[0] - 0.05).abs() < 1e-16);
        assert_eq!(s.u[0], 0.5);
    }

    #[test]
    fn infinity_norm_is_monotone_under_growing_gradients() {
        let cfg = AdamaxConfig::default();
        let mut s = OptimizerState::new(1);
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for k in 1..20 {
            adamax_step(&mut s, &mut p, &[k as f64], &cfg).unwrap();
            assert!(s.u[0] >= prev && s.u[0] >= 0.0);
            prev = s.u[0];
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let cfg = AdamaxConfig::default();
        let mut s = OptimizerState::new(2);
        let mut p = vec![1.0, 2.0];
        let applied = adamax_step(&mut s, &mut p, &[f64::NAN, 1.0], &cfg).unwrap();
        assert!(!applied);
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!((s.t, s.skipped), (0, 1));
        assert!(adamax_step(&mut s, &mut p, &[1.0], &cfg).is_err());
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let cfg = AdamaxConfig::default();
            let mut s = OptimizerState::new(3);
            let mut p = vec![0.1, 0.2, 0.3];
            for k in 0..100 {
                let g: Vec<f64> = p.iter().map(|x| (x * k as f64).sin()).collect();
                adamax_step(&mut s, &mut p, &g, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
