use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor added inside the log of the marginal.
pub const DEBIAS_EPS: f64 = 1e-6;

/// Running estimate of the model's class marginal on unlabeled data.
///
/// Pseudo-labels come from debiased logits, the scaled logits minus
/// `lambda * ln(marginal + eps)`. The strong-view loss adds the same offset
/// to its scaled logits, an adaptive margin that is wider for rarely
/// predicted classes. Offsets live in the space of logits divided by their
/// temperature, the space the softmax sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasState {
    pub ema_marginal: Vec<f64>,
    pub momentum: f64,
    pub lambda: f64,
    /// Multiplier on the offset when applied to raw logits for selection.
    /// `t_conf` places it after sharpening; 1 places it before.
    #[serde(default = "unit")]
    pub selection_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl DebiasState {
    /// Uniform marginal over `num_classes`.
    pub fn new(num_classes: usize, momentum: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("debias momentum {momentum} not in [0, 1]")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("debias lambda {lambda} must be >= 0")));
        }
        Ok(Self {
            ema_marginal: vec![1.0 / num_classes as f64; num_classes],
            momentum,
            lambda,
            selection_scale: 1.0,
        })
    }

    /// `ema <- m * ema + (1 - m) * mean_rows(weak_probs)`.
    ///
    /// Renormalizes afterwards so rounding never lets the marginal drift off
    /// the simplex. An empty batch leaves the state unchanged.
    pub fn update(&mut self, weak_probs: ArrayView2<f64>) {
        let n = weak_probs.nrows();
        if n == 0 {
            return;
        }
        let m = self.momentum;
        for (c, e) in self.ema_marginal.iter_mut().enumerate() {
            let mean = weak_probs.column(c).sum() / n as f64;
            *e = m * *e + (1.0 - m) * mean;
        }
        let total: f64 = self.ema_marginal.iter().sum();
        self.ema_marginal.iter_mut().for_each(|e| *e /= total);
    }

    /// Per-class offset `lambda * ln(ema + eps)`.
    pub fn offsets(&self) -> Vec<f64> {
        self.ema_marginal
            .iter()
            .map(|&p| self.lambda * (p + DEBIAS_EPS).ln())
            .collect()
    }

    /// Debiased logits `q - s * lambda * ln(ema + eps)`, `s` the selection scale.
    pub fn adjust(&self, logits: ArrayView2<f64>) -> Array2<f64> {
        let offsets = self.offsets();
        let mut out = logits.to_owned();
        for mut row in out.outer_iter_mut() {
            for (v, o) in row.iter_mut().zip(&offsets) {
                *v -= self.selection_scale * o;
            }
        }
        out
    }
}

/// Free-function form of [`DebiasState::update`].
pub fn debias_update(state: &DebiasState, weak_probs: ArrayView2<f64>) -> DebiasState {
    let mut next = state.clone();
    next.update(weak_probs);
    next
}

/// Free-function form of [`DebiasState::adjust`].
pub fn debias_adjust(logits: ArrayView2<f64>, state: &DebiasState) -> Array2<f64> {
    state.adjust(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::softmax::argmax_rows;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_momentum_takes_batch_mean() {
        let s = DebiasState::new(3, 0.0, 0.5).unwrap();
        let probs = array![[0.2, 0.3, 0.5], [0.4, 0.5, 0.1]];
        let next = debias_update(&s, probs.view());
        for (a, b) in next.ema_marginal.iter().zip([0.3, 0.4, 0.3]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn unit_momentum_freezes() {
        let s = DebiasState::new(3, 1.0, 0.5).unwrap();
        let next = debias_update(&s, array![[1.0, 0.0, 0.0]].view());
        assert_eq!(next.ema_marginal, s.ema_marginal);
    }

    #[test]
    fn repeated_batches_converge_geometrically() {
        let m = 0.9;
        let mut s = DebiasState::new(2, m, 0.5).unwrap();
        let probs = array![[0.8, 0.2]];
        for step in 1..=60 {
            s.update(probs.view());
            // closed form: ema_t = target + (ema_0 - target) * m^t
            let expect = 0.8 + (0.5 - 0.8) * m.powi(step);
            assert_abs_diff_eq!(s.ema_marginal[0], expect, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.ema_marginal.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_marginal_is_a_constant_shift() {
        let s = DebiasState::new(4, 0.999, 0.5).unwrap();
        let q = array![[0.1, 0.9, -0.2, 0.3], [0.5, 0.4, 0.45, -1.0]];
        let adj = debias_adjust(q.view(), &s);
        let diff = &adj - &q;
        let first = diff[[0, 0]];
        assert!(diff.iter().all(|d| (d - first).abs() < 1e-15));
        assert_eq!(argmax_rows(adj.view()), argmax_rows(q.view()));
    }

    #[test]
    fn zero_lambda_is_identity() {
        let mut s = DebiasState::new(3, 0.0, 0.0).unwrap();
        s.update(array![[0.9, 0.05, 0.05]].view());
        let q = array![[0.1, 0.2, 0.3]];
        assert_eq!(debias_adjust(q.view(), &s), q);
    }

    #[test]
    fn concentrated_marginal_hand_computation() {
        let lambda = 0.5;
        let s = DebiasState {
            ema_marginal: vec![0.9, 0.05, 0.05],
            momentum: 0.999,
            lambda,
            selection_scale: 1.0,
        };
        let q = array![[0.0, 0.0, 0.0]];
        let adj = debias_adjust(q.view(), &s);
        // class 0 drops by lambda * ln((0.9 + eps) / (0.05 + eps)) relative to the others
        let expected = lambda * ((0.9f64 + 1e-6) / (0.05 + 1e-6)).ln();
        assert_abs_diff_eq!(adj[[0, 1]] - adj[[0, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.5 * 18f64.ln(), epsilon = 1e-5);
        assert_eq!(adj[[0, 1]], adj[[0, 2]]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(DebiasState::new(3, 1.5, 0.5).is_err());
        assert!(DebiasState::new(3, 0.5, -1.0).is_err());
    }
}
