use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Std of the first-transform initialization.
pub const ADAPTER_INIT_STD: f64 = 1e-3;

/// Residual map `z = x + relu(x · down) · up`, standing in for encoder
/// finetuning. Disabled, it is the identity.
///
/// `up` starts at zero, so enabling a fresh adapter does not change the
/// model's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub enabled: bool,
    /// `dim × hidden`.
    pub down: Array2<f64>,
    /// `hidden × dim`.
    pub up: Array2<f64>,
}

impl Adapter {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, ADAPTER_INIT_STD).expect("valid std");
        Self {
            enabled: false,
            down: Array2::from_shape_fn((dim, hidden), |_| normal.sample(rng)),
            up: Array2::zeros((hidden, dim)),
        }
    }

    /// Default hidden width, a quarter of the embedding dim.
    pub fn default_hidden(dim: usize) -> usize {
        (dim / 4).max(1)
    }

    pub fn hidden(&self) -> usize {
        self.down.ncols()
    }
}
