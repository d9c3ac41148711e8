use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One AdamW update with decoupled weight decay and bias correction:
///
/// ```text
/// p <- p - lr * wd * p
/// m <- b1 m + (1 - b1) g;   v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch {
            expected: params.len(),
            actual: grads.len(),
            context: "optimizer parameter vs gradient length".into(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *p -= lr * weight_decay * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Cosine annealing from `base_lr` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    0.5 * base_lr * (1.0 + (PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_step_hand_computation() {
        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        adamw_step(&mut p, &[0.5], &mut s, 1e-4, 1e-2).unwrap();
        // decay: 1 - 1e-6; Adam: m_hat = 0.5, v_hat = 0.25 -> step 0.5 / (0.5 + 1e-8)
        let expected = (1.0 - 1e-4 * 1e-2) - 1e-4 * (0.5 / (0.5 + 1e-8));
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.999899, epsilon = 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = [0.3, -2.0];
        let mut s = OptimizerState::new(2);
        for _ in 0..5 {
            adamw_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, 0.0).unwrap();
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = [1.0];
        let mut s = OptimizerState::new(1);
        assert!(adamw_step(&mut p, &[f64::INFINITY], &mut s, 1e-3, 0.0).is_err());
        assert_eq!(p, [1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = vec![0.1, 0.2, -0.3];
            let mut s = OptimizerState::new(3);
            for k in 0..100 {
                let g: Vec<f64> = p.iter().map(|x| (x * 3.0 + k as f64 * 0.01).sin()).collect();
                adamw_step(&mut p, &g, &mut s, 1e-2, 1e-2).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4), 1e-4);
        assert_abs_diff_eq!(cosine_lr(100, 100, 1e-4), 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(cosine_lr(50, 100, 1e-4), 0.5e-4, epsilon = 1e-18);
    }

    #[test]
    fn cosine_is_non_increasing() {
        let lrs: Vec<f64> = (0..=1000).map(|s| cosine_lr(s, 1000, 1.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
