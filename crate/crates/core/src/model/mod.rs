//! Linear head over (optionally adapted) embeddings, its hand-written
//! backward pass, and the temperature parameters.

mod adapter;
mod checkpoint;
mod head;
mod temperature;

use ndarray::{Array2, ArrayView2, Zip};

pub use adapter::{Adapter, ADAPTER_INIT_STD};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use head::{init_head_from_text, LinearHead};
pub use temperature::{
    TemperatureSet, DEFAULT_CONF_TEMPERATURE, DEFAULT_LOSS_TEMPERATURE, TEMPERATURE_FLOOR,
};

use crate::{Error, Result};

/// Everything the trainer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub head: LinearHead,
    pub adapter: Adapter,
    pub temps: TemperatureSet,
}

/// Gradient of a scalar loss with respect to every learnable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: Array2<f64>,
    pub down: Array2<f64>,
    pub up: Array2<f64>,
    pub theta_x: f64,
    pub theta_u: f64,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            head: Array2::zeros(model.head.weights.raw_dim()),
            down: Array2::zeros(model.adapter.down.raw_dim()),
            up: Array2::zeros(model.adapter.up.raw_dim()),
            theta_x: 0.0,
            theta_u: 0.0,
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        self.head += &other.head;
        self.down += &other.down;
        self.up += &other.up;
        self.theta_x += other.theta_x;
        self.theta_u += other.theta_u;
    }

    pub fn is_finite(&self) -> bool {
        self.theta_x.is_finite()
            && self.theta_u.is_finite()
            && [&self.head, &self.down, &self.up]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Loss gradients arriving at the model's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    /// d loss / d logits, `n × C`.
    pub dlogits: Array2<f64>,
    /// d loss / d T_loss_x.
    pub d_t_x: f64,
    /// d loss / d T_loss_u.
    pub d_t_u: f64,
}

impl Model {
    pub fn new(head: LinearHead, adapter: Adapter, temps: TemperatureSet) -> Result<Self> {
        if adapter.down.nrows() != head.dim() || adapter.up.ncols() != head.dim() {
            return Err(Error::DimMismatch {
                expected: head.dim(),
                actual: adapter.down.nrows(),
                context: "adapter vs head dim".into(),
            });
        }
        // Optimizers update tables through flat row-major slices.
        let mut head = head;
        let mut adapter = adapter;
        for table in [&mut head.weights, &mut adapter.down, &mut adapter.up] {
            if !table.is_standard_layout() {
                *table = table.as_standard_layout().into_owned();
            }
        }
        Ok(Self {
            head,
            adapter,
            temps,
        })
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.ncols(),
                context: "input embedding dim".into(),
            });
        }
        Ok(())
    }

    /// Adapter pre-activation `x · down` and output `z`.
    fn embed_parts(&self, x: ArrayView2<f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        if !self.adapter.enabled {
            return (None, x.to_owned());
        }
        let pre = x.dot(&self.adapter.down);
        let hidden = pre.mapv(|v| v.max(0.0));
        let z = &x + &hidden.dot(&self.adapter.up);
        (Some(pre), z)
    }

    /// Adapted embeddings `z` (the input itself when the adapter is off).
    pub fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.embed_parts(x).1)
    }

    /// Logits `q = z · W`, shape `n × C`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.embed(x)?.dot(&self.head.weights))
    }

    /// Parameter gradients for upstream logit gradients `dlogits` on inputs
    /// `x`. Temperature gradients are left at zero; see [`backward`].
    pub fn backward_logits(&self, x: ArrayView2<f64>, dlogits: ArrayView2<f64>) -> Result<Gradients> {
        self.check_input(x)?;
        if dlogits.dim() != (x.nrows(), self.num_classes()) {
            return Err(Error::DimMismatch {
                expected: x.nrows(),
                actual: dlogits.nrows(),
                context: "upstream gradient shape".into(),
            });
        }
        if dlogits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("upstream logit gradients".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let (pre, z) = self.embed_parts(x);
        grads.head = z.t().dot(&dlogits);
        if let Some(pre) = pre {
            let dz = dlogits.dot(&self.head.weights.t());
            let hidden = pre.mapv(|v| v.max(0.0));
            grads.up = hidden.t().dot(&dz);
            let mut dpre = dz.dot(&self.adapter.up.t());
            Zip::from(&mut dpre).and(&pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            grads.down = x.t().dot(&dpre);
        }
        Ok(grads)
    }
}

/// Full backward pass: parameter gradients from the logit gradients plus
/// temperature gradients through `T = exp(theta)`.
pub fn backward(model: &Model, x: ArrayView2<f64>, upstream: &Upstream) -> Result<Gradients> {
    if !(upstream.d_t_x.is_finite() && upstream.d_t_u.is_finite()) {
        return Err(Error::NonFinite("upstream temperature gradients".into()));
    }
    let mut grads = model.backward_logits(x, upstream.dlogits.view())?;
    let (gx, gu) = model.temps.theta_grads(upstream.d_t_x, upstream.d_t_u);
    grads.theta_x = gx;
    grads.theta_u = gu;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(d: usize, c: usize, h: usize, rng: &mut ChaCha8Rng) -> Model {
        let mut m = |r: usize, k: usize| Array2::from_shape_fn((r, k), |_| rng.random_range(-1.0..1.0));
        let head = LinearHead { weights: m(d, c) };
        let adapter = Adapter {
            enabled: true,
            down: m(d, h),
            up: m(h, d),
        };
        Model::new(head, adapter, TemperatureSet::default()).unwrap()
    }

    /// Independent triple-loop matrix product.
    fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((a.nrows(), b.ncols()));
        for i in 0..a.nrows() {
            for j in 0..b.ncols() {
                let mut s = 0.0;
                for k in 0..a.ncols() {
                    s += a[[i, k]] * b[[k, j]];
                }
                out[[i, j]] = s;
            }
        }
        out
    }

    #[test]
    fn standard_basis_head_returns_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::new(
            LinearHead {
                weights: Array2::eye(4),
            },
            Adapter::new(4, 2, &mut rng),
            TemperatureSet::default(),
        )
        .unwrap();
        let x = ndarray::array![[0.1, -0.2, 0.3, 0.4]];
        assert_eq!(model.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_up_adapter_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = random_model(6, 4, 3, &mut rng);
        model.adapter.up.fill(0.0);
        let x = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let on = model.forward(x.view()).unwrap();
        model.adapter.enabled = false;
        let off = model.forward(x.view()).unwrap();
        assert_eq!(on, off);
    }

    #[test]
    fn forward_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let model = random_model(7, 5, 3, &mut rng);
            let x = Array2::from_shape_fn((6, 7), |_| rng.random_range(-1.0..1.0));
            let pre = naive_matmul(&x, &model.adapter.down).mapv(|v| v.max(0.0));
            let z = &x + &naive_matmul(&pre, &model.adapter.up);
            let expect = naive_matmul(&z, &model.head.weights);
            let got = model.forward(x.view()).unwrap();
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(6, 4, 3, &mut rng);
        let x = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        let up = Upstream {
            dlogits: Array2::zeros((5, 4)),
            d_t_x: 0.0,
            d_t_u: 0.0,
        };
        let g = backward(&model, x.view(), &up).unwrap();
        assert_eq!(g, Gradients::zeros_like(&model));
    }

    #[test]
    fn frozen_temperature_reports_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = random_model(3, 2, 1, &mut rng);
        model.temps.learn_x = false;
        let up = Upstream {
            dlogits: Array2::zeros((1, 2)),
            d_t_x: 5.0,
            d_t_u: 5.0,
        };
        let g = backward(&model, Array2::zeros((1, 3)).view(), &up).unwrap();
        assert_eq!(g.theta_x, 0.0);
        assert!(g.theta_u != 0.0);
    }

    #[test]
    fn non_finite_upstream_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(3, 2, 1, &mut rng);
        let up = Upstream {
            dlogits: Array2::from_elem((1, 2), f64::NAN),
            d_t_x: 0.0,
            d_t_u: 0.0,
        };
        assert!(backward(&model, Array2::zeros((1, 3)).view(), &up).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = random_model(3, 2, 1, &mut rng);
        assert!(model.forward(Array2::zeros((1, 4)).view()).is_err());
    }
}
