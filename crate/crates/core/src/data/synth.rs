//! Seeded synthetic tasks with the structure of real embedding datasets.
//!
//! Each class has a mean direction drawn uniformly on the unit sphere.
//! A sample is its class mean plus isotropic Gaussian noise, projected back
//! onto the sphere. Noise scales are expressed as the expected norm of the
//! noise vector, so `noise = 1.0` perturbs a unit mean by roughly its own
//! length regardless of `dim`.
//!
//! Optionally every non-text sample also gets a shared low-rank nuisance
//! component: `nuisance_rank` fixed random directions, common to all
//! classes, with total expected norm `nuisance_noise`. This gives the noise
//! an anisotropic covariance, so nearest-prototype classification is no
//! longer optimal and discriminative training has something to learn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bundle::DatasetBundle;
use super::fewshot::sample_few_shot;
use super::table::{EmbeddingTable, LabeledSplit};
use crate::{Error, Result};

/// Generator parameters. The defaults are the reference task: 50 classes in
/// 64 dimensions, 16 labeled shots per class, retrieved data with 30% label
/// noise and a per-class domain shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Labeled pool size per class. With `shots` set, the pool is cut to
    /// `shots` per class and the rest joins the unlabeled split.
    pub labeled_per_class: usize,
    pub shots: Option<usize>,
    /// Unlabeled count for class 0; class `c` gets
    /// `round(unlabeled_per_class * (c + 1)^-imbalance)`.
    pub unlabeled_per_class: usize,
    pub retrieved_per_class: usize,
    pub test_per_class: usize,
    /// Within-class noise (expected noise-vector norm).
    pub noise: f64,
    pub text_noise: f64,
    /// Probability a retrieved label is replaced by a different class.
    pub label_noise: f64,
    /// Norm of the fixed per-class offset applied to retrieved samples.
    pub shift: f64,
    pub imbalance: f64,
    pub weak_noise: f64,
    pub strong_noise: f64,
    /// Probability of zeroing each coordinate of a strong view.
    pub strong_drop: f64,
    pub strong_views: usize,
    /// Number of shared nuisance directions (0 disables the component).
    pub nuisance_rank: usize,
    /// Expected norm of the nuisance component.
    pub nuisance_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 50,
            dim: 64,
            labeled_per_class: 16,
            shots: None,
            unlabeled_per_class: 100,
            retrieved_per_class: 32,
            test_per_class: 30,
            noise: 0.7,
            text_noise: 1.5,
            label_noise: 0.3,
            shift: 0.5,
            imbalance: 0.0,
            weak_noise: 0.1,
            strong_noise: 0.4,
            strong_drop: 0.1,
            strong_views: 4,
            nuisance_rank: 4,
            nuisance_noise: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be >= 2".into()));
        }
        if self.strong_views == 0 {
            return Err(Error::Config("strong_views must be >= 1".into()));
        }
        let scales = [
            ("noise", self.noise),
            ("text_noise", self.text_noise),
            ("shift", self.shift),
            ("imbalance", self.imbalance),
            ("weak_noise", self.weak_noise),
            ("strong_noise", self.strong_noise),
            ("nuisance_noise", self.nuisance_noise),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, p) in [("label_noise", self.label_noise), ("strong_drop", self.strong_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if let Some(k) = self.shots {
            if k == 0 || k > self.labeled_per_class {
                return Err(Error::Config(format!(
                    "shots {k} must be in 1..={}",
                    self.labeled_per_class
                )));
            }
        }
        Ok(())
    }

    /// Unlabeled count for `class` under the imbalance profile.
    pub fn unlabeled_count(&self, class: usize) -> usize {
        let scale = ((class + 1) as f64).powf(-self.imbalance);
        (self.unlabeled_per_class as f64 * scale).round() as usize
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
    /// Shared nuisance directions, each pre-scaled by `nuisance_noise / sqrt(rank)`.
    nuisance: Vec<Vec<f64>>,
}

impl Sampler {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        let s = scale / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| s * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        loop {
            let mut v = self.gaussian(1.0);
            if normalize(&mut v) {
                return v;
            }
        }
    }

    /// `normalize(center + noise)`, falling back to `center` if the sum
    /// cancels to zero.
    fn perturb(&mut self, center: &[f64], scale: f64) -> Vec<f64> {
        if scale == 0.0 {
            return center.to_vec();
        }
        let noise = self.gaussian(scale);
        let mut v: Vec<f64> = center.iter().zip(&noise).map(|(a, b)| a + b).collect();
        if normalize(&mut v) {
            v
        } else {
            center.to_vec()
        }
    }

    /// A class sample around `center`: isotropic noise plus the shared
    /// nuisance component, renormalized.
    fn sample(&mut self, center: &[f64], scale: f64) -> Vec<f64> {
        if self.nuisance.is_empty() {
            return self.perturb(center, scale);
        }
        let mut v = center.to_vec();
        let noise = self.gaussian(scale);
        v.iter_mut().zip(&noise).for_each(|(a, b)| *a += b);
        for k in 0..self.nuisance.len() {
            let g: f64 = self.rng.sample(StandardNormal);
            v.iter_mut().zip(&self.nuisance[k]).for_each(|(a, u)| *a += g * u);
        }
        if normalize(&mut v) {
            v
        } else {
            center.to_vec()
        }
    }

    fn strong_view(&mut self, base: &[f64], scale: f64, drop: f64) -> Vec<f64> {
        let mut v = self.perturb(base, scale);
        if drop > 0.0 {
            for x in v.iter_mut() {
                if self.rng.random::<f64>() < drop {
                    *x = 0.0;
                }
            }
            if !normalize(&mut v) {
                return base.to_vec();
            }
        }
        v
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// One synthetic "image": its weak view and `k` strong views.
struct Item {
    label: usize,
    weak: Vec<f64>,
    strong: Vec<Vec<f64>>,
}

/// Generates a bundle from `spec`. Deterministic in `spec.seed`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let (c, d) = (spec.num_classes, spec.dim);
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        dim: d,
        nuisance: Vec::new(),
    };
    let means: Vec<Vec<f64>> = (0..c).map(|_| s.unit()).collect();
    let shifts: Vec<Vec<f64>> = (0..c).map(|_| s.unit()).collect();

    let text: Vec<Vec<f64>> = means.iter().map(|m| s.perturb(m, spec.text_noise)).collect();
    if spec.nuisance_rank > 0 {
        let per = spec.nuisance_noise / (spec.nuisance_rank as f64).sqrt();
        s.nuisance = (0..spec.nuisance_rank)
            .map(|_| s.unit().into_iter().map(|x| x * per).collect())
            .collect();
    }

    let item = |s: &mut Sampler, label: usize| {
        let base = s.sample(&means[label], spec.noise);
        let weak = s.perturb(&base, spec.weak_noise);
        let strong = (0..spec.strong_views)
            .map(|_| s.strong_view(&base, spec.strong_noise, spec.strong_drop))
            .collect();
        Item {
            label,
            weak,
            strong,
        }
    };

    let mut pool = Vec::new();
    for label in 0..c {
        for _ in 0..spec.labeled_per_class {
            pool.push(item(&mut s, label));
        }
    }
    let mut unlabeled = Vec::new();
    for label in 0..c {
        for _ in 0..spec.unlabeled_count(label) {
            unlabeled.push(item(&mut s, label));
        }
    }

    let mut retrieved_rows = Vec::new();
    let mut retrieved_labels = Vec::new();
    for label in 0..c {
        let shifted: Vec<f64> = means[label]
            .iter()
            .zip(&shifts[label])
            .map(|(m, o)| m + spec.shift * o)
            .collect();
        for _ in 0..spec.retrieved_per_class {
            let mut v = s.sample(&shifted, spec.noise);
            // perturb only renormalizes when it adds noise
            if spec.noise == 0.0 && spec.shift > 0.0 && !normalize(&mut v) {
                v = means[label].clone();
            }
            retrieved_rows.push(v);
            let noisy = if s.rng.random::<f64>() < spec.label_noise {
                let other = s.rng.random_range(0..c - 1);
                if other >= label {
                    other + 1
                } else {
                    other
                }
            } else {
                label
            };
            retrieved_labels.push(noisy);
        }
    }

    let mut test_rows = Vec::new();
    let mut test_labels = Vec::new();
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..spec.test_per_class {
            test_rows.push(s.sample(mean, spec.noise));
            test_labels.push(label);
        }
    }

    let table = |rows: &[Vec<f64>]| EmbeddingTable::from_rows_f64(d, rows, true);
    let pool_split = LabeledSplit::new(
        table(&pool.iter().map(|i| i.weak.clone()).collect::<Vec<_>>())?,
        pool.iter().map(|i| i.label).collect(),
    )?;

    let labeled = match spec.shots {
        Some(k) => {
            let split = sample_few_shot(&pool_split, c, k, spec.seed ^ 0x5eed_f00d)?;
            let mut moved: Vec<Item> = Vec::with_capacity(split.remainder_indices.len());
            let mut slots: Vec<Option<Item>> = pool.into_iter().map(Some).collect();
            for &i in &split.remainder_indices {
                moved.push(slots[i].take().expect("remainder index used once"));
            }
            moved.append(&mut unlabeled);
            unlabeled = moved;
            split.labeled
        }
        None => pool_split,
    };

    let weak: Vec<Vec<f64>> = unlabeled.iter().map(|i| i.weak.clone()).collect();
    let strong: Vec<Vec<f64>> = unlabeled.iter().flat_map(|i| i.strong.clone()).collect();
    let truth: Vec<usize> = unlabeled.iter().map(|i| i.label).collect();

    let bundle = DatasetBundle {
        num_classes: c,
        class_names: (0..c).map(|i| format!("class_{i}")).collect(),
        labeled,
        unlabeled_weak: table(&weak)?,
        unlabeled_strong: table(&strong)?,
        strong_views: spec.strong_views,
        unlabeled_truth: Some(truth),
        retrieved: LabeledSplit::new(table(&retrieved_rows)?, retrieved_labels)?,
        test: LabeledSplit::new(table(&test_rows)?, test_labels)?,
        text: table(&text)?,
    };
    bundle.validate()?;
    Ok(bundle)
}
