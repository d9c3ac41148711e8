use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lowest realized loss temperature.
pub const TEMPERATURE_FLOOR: f64 = 0.01;
/// Initial loss temperature, the value contrastive VLM pretraining starts from.
pub const DEFAULT_LOSS_TEMPERATURE: f64 = 0.07;
/// Confidence temperature used for pseudo-label selection.
pub const DEFAULT_CONF_TEMPERATURE: f64 = 0.01;

/// The fixed confidence temperature and the two loss temperatures.
///
/// Loss temperatures are stored in log space, `T = exp(theta)`, so gradient
/// steps can never make them negative. `theta` is projected back to
/// `ln(floor)` after every update, keeping the realized temperature at or
/// above `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSet {
    pub t_conf: f64,
    /// Labeled-path (and retrieved) loss temperature, log space.
    pub theta_x: f64,
    /// Unlabeled-path loss temperature, log space.
    pub theta_u: f64,
    pub learn_x: bool,
    pub learn_u: bool,
    pub floor: f64,
}

impl Default for TemperatureSet {
    fn default() -> Self {
        Self {
            t_conf: DEFAULT_CONF_TEMPERATURE,
            theta_x: DEFAULT_LOSS_TEMPERATURE.ln(),
            theta_u: DEFAULT_LOSS_TEMPERATURE.ln(),
            learn_x: true,
            learn_u: true,
            floor: TEMPERATURE_FLOOR,
        }
    }
}

impl TemperatureSet {
    /// Both loss temperatures start at `t_loss`.
    pub fn new(t_conf: f64, t_loss: f64, learnable: bool) -> Result<Self> {
        for t in [t_conf, t_loss] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidTemperature(t));
            }
        }
        let mut temps = Self {
            t_conf,
            theta_x: t_loss.ln(),
            theta_u: t_loss.ln(),
            learn_x: learnable,
            learn_u: learnable,
            floor: TEMPERATURE_FLOOR,
        };
        temps.project();
        Ok(temps)
    }

    pub fn t_loss_x(&self) -> f64 {
        self.theta_x.exp().max(self.floor)
    }

    pub fn t_loss_u(&self) -> f64 {
        self.theta_u.exp().max(self.floor)
    }

    /// Chain rule through `T = exp(theta)`: `dL/dtheta = T * dL/dT`.
    /// Frozen temperatures report zero.
    pub fn theta_grads(&self, d_t_x: f64, d_t_u: f64) -> (f64, f64) {
        let gx = if self.learn_x { self.t_loss_x() * d_t_x } else { 0.0 };
        let gu = if self.learn_u { self.t_loss_u() * d_t_u } else { 0.0 };
        (gx, gu)
    }

    /// Clamps both thetas to `ln(floor)` from below.
    pub fn project(&mut self) {
        let min = self.floor.ln();
        self.theta_x = self.theta_x.max(min);
        self.theta_u = self.theta_u.max(min);
    }

    /// Restarts both loss temperatures at `t_loss`.
    pub fn reset_loss(&mut self, t_loss: f64) {
        self.theta_x = t_loss.ln();
        self.theta_u = t_loss.ln();
        self.project();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_recipe() {
        let t = TemperatureSet::default();
        assert_abs_diff_eq!(t.t_loss_x(), 0.07, epsilon = 1e-15);
        assert_abs_diff_eq!(t.t_loss_u(), 0.07, epsilon = 1e-15);
        assert_eq!(t.t_conf, 0.01);
    }

    #[test]
    fn frozen_theta_has_zero_gradient() {
        let t = TemperatureSet::new(0.01, 1.0, false).unwrap();
        assert_eq!(t.theta_grads(3.0, -2.0), (0.0, 0.0));
    }

    #[test]
    fn rejects_non_positive() {
        assert!(TemperatureSet::new(0.0, 0.07, true).is_err());
        assert!(TemperatureSet::new(0.01, -1.0, true).is_err());
    }

    proptest! {
        #[test]
        fn realized_temperature_never_below_floor(steps in prop::collection::vec(-5.0f64..5.0, 0..200)) {
            let mut t = TemperatureSet::default();
            for s in steps {
                t.theta_x -= s;
                t.theta_u += s;
                t.project();
                prop_assert!(t.t_loss_x() >= TEMPERATURE_FLOOR);
                prop_assert!(t.t_loss_u() >= TEMPERATURE_FLOOR);
                prop_assert!(t.t_loss_x().is_finite() && t.t_loss_u().is_finite());
            }
        }
    }
}
