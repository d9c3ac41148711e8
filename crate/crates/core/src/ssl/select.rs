use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::softmax::{argmax, check_temperature, softmax_into};
use crate::{Error, Result};

/// Pseudo-labels and the confidence mask for one unlabeled batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub pseudo_labels: Vec<usize>,
    /// Max softmax probability per row.
    pub confidences: Vec<f64>,
    /// `mask[i]` iff `confidences[i] >= sigma`.
    pub mask: Vec<bool>,
    /// Fraction of rows selected; 0 for an empty batch.
    pub utilization: f64,
}

impl SelectionResult {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Pseudo-labels of selected rows only.
    pub fn selected_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.pseudo_labels
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&y, _)| y)
    }
}

/// Thresholds the `t_conf`-sharpened softmax of weak-view logits at `sigma`.
pub fn select(weak_logits: ArrayView2<f64>, t_conf: f64, sigma: f64) -> Result<SelectionResult> {
    check_temperature(t_conf)?;
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Config(format!("sigma must be in [0, 1], got {sigma}")));
    }
    if weak_logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weak logits".into()));
    }
    let n = weak_logits.nrows();
    let mut probs = vec![0.0; weak_logits.ncols()];
    let mut pseudo_labels = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for row in weak_logits.outer_iter() {
        let row = row.to_vec();
        softmax_into(&row, t_conf, &mut probs);
        let y = argmax(&row);
        let conf = probs[y];
        pseudo_labels.push(y);
        confidences.push(conf);
        mask.push(conf >= sigma);
    }
    let selected = mask.iter().filter(|&&m| m).count();
    Ok(SelectionResult {
        pseudo_labels,
        confidences,
        mask,
        utilization: if n == 0 { 0.0 } else { selected as f64 / n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cosine_scale(n: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..=1.0))
    }

    #[test]
    fn flat_cosine_logits_select_nothing() {
        let logits = cosine_scale(500, 200, 1);
        let bound = (2f64).exp() / ((2f64).exp() + 199.0);
        let sel = select(logits.view(), 1.0, 0.8).unwrap();
        assert_eq!(sel.utilization, 0.0);
        assert!(sel.confidences.iter().all(|&c| c <= bound));
    }

    #[test]
    fn sharp_temperature_selects_clear_winners() {
        let mut logits = cosine_scale(50, 200, 2);
        for mut row in logits.outer_iter_mut() {
            // top-1 at 1.0, everything else at most 0.8
            row.mapv_inplace(|v| v.min(0.8));
            row[7] = 1.0;
        }
        let floor = 1.0 / (1.0 + 199.0 * (-20f64).exp());
        assert!(floor > 0.999);
        let sel = select(logits.view(), 0.01, 0.8).unwrap();
        assert_eq!(sel.utilization, 1.0);
        assert!(sel.confidences.iter().all(|&c| c >= floor));
        assert!(sel.pseudo_labels.iter().all(|&y| y == 7));
    }

    #[test]
    fn zero_threshold_selects_all() {
        let sel = select(cosine_scale(10, 5, 3).view(), 1.0, 0.0).unwrap();
        assert!(sel.mask.iter().all(|&m| m));
        assert_eq!(sel.utilization, 1.0);
    }

    #[test]
    fn empty_batch() {
        let sel = select(Array2::zeros((0, 4)).view(), 1.0, 0.8).unwrap();
        assert_eq!(sel.utilization, 0.0);
        assert!(sel.mask.is_empty());
    }

    #[test]
    fn ties_pick_lowest_class() {
        let logits = ndarray::array![[0.3, 0.3, 0.1]];
        let sel = select(logits.view(), 1.0, 0.0).unwrap();
        assert_eq!(sel.pseudo_labels, vec![0]);
    }
}
