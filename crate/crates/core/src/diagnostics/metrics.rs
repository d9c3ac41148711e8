use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy inputs".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: labels.len(),
            actual: predictions.len(),
            context: "predictions vs labels".into(),
        });
    }
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Uniform histogram over `(0, 1]`; bin `i` covers `(i/n, (i+1)/n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `num_bins + 1` edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn confidence_histogram(confidences: &[f64], num_bins: usize) -> Result<Histogram> {
    if num_bins < 1 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let edges = (0..=num_bins).map(|i| i as f64 / num_bins as f64).collect();
    let mut counts = vec![0; num_bins];
    for &c in confidences {
        let bin = ((c * num_bins as f64).ceil() as isize - 1).clamp(0, num_bins as isize - 1);
        counts[bin as usize] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// How peaked a batch of softmax outputs is.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessStats {
    pub mean_max_prob: f64,
    /// Mean Shannon entropy in nats, within `[0, ln C]`.
    pub mean_entropy: f64,
    /// Input with each column divided by its maximum, for heatmaps.
    pub matrix: Array2<f64>,
}

pub fn flatness_stats(probs: ArrayView2<f64>) -> Result<FlatnessStats> {
    let n = probs.nrows();
    if n == 0 {
        return Err(Error::Empty("probability matrix".into()));
    }
    let mut max_sum = 0.0;
    let mut ent_sum = 0.0;
    for (i, row) in probs.outer_iter().enumerate() {
        let total: f64 = row.sum();
        if (total - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config(format!("row {i} is not a probability vector")));
        }
        max_sum += row.iter().copied().fold(0.0, f64::max);
        ent_sum -= row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    }
    let mut matrix = probs.to_owned();
    for mut col in matrix.columns_mut() {
        let max = col.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            col.mapv_inplace(|v| v / max);
        }
    }
    Ok(FlatnessStats {
        mean_max_prob: max_sum / n as f64,
        mean_entropy: ent_sum / n as f64,
        matrix,
    })
}

/// `KL(pi || uniform)` of the empirical marginal of `labels` over
/// `num_classes`; `None` for no labels.
pub fn kl_to_uniform(labels: impl IntoIterator<Item = usize>, num_classes: usize) -> Option<f64> {
    let mut counts = vec![0usize; num_classes];
    let mut n = 0usize;
    for y in labels {
        counts[y] += 1;
        n += 1;
    }
    kl_counts_to_uniform(&counts, n)
}

pub(crate) fn kl_counts_to_uniform(counts: &[usize], n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let c = counts.len() as f64;
    Some(
        counts
            .iter()
            .filter(|&&k| k > 0)
            .map(|&k| {
                let p = k as f64 / n as f64;
                p * (p * c).ln()
            })
            .sum(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        let p = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let y = [1; 10];
        assert_eq!(accuracy(&p, &y).unwrap(), 0.3);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn small_confidences_land_in_first_bin() {
        let h = confidence_histogram(&[0.005; 7], 10).unwrap();
        assert_eq!(h.counts[0], 7);
        assert_eq!(h.counts[1..].iter().sum::<usize>(), 0);
        assert_eq!(h.edges.len(), 11);
    }

    #[test]
    fn empty_histogram() {
        let h = confidence_histogram(&[], 5).unwrap();
        assert_eq!(h.counts, vec![0; 5]);
        assert!(confidence_histogram(&[0.5], 0).is_err());
    }

    #[test]
    fn bin_edges_are_right_closed() {
        let h = confidence_histogram(&[0.1, 0.1000001, 1.0], 10).unwrap();
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[9], 1);
    }

    #[test]
    fn uniform_and_one_hot_rows() {
        let c = 8;
        let uni = Array2::from_elem((3, c), 1.0 / c as f64);
        let s = flatness_stats(uni.view()).unwrap();
        assert_abs_diff_eq!(s.mean_entropy, (c as f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean_max_prob, 1.0 / c as f64, epsilon = 1e-15);
        let hot = Array2::from_shape_fn((4, c), |(i, j)| if i % c == j { 1.0 } else { 0.0 });
        let s = flatness_stats(hot.view()).unwrap();
        assert_eq!(s.mean_entropy, 0.0);
        assert_eq!(s.mean_max_prob, 1.0);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        let m = ndarray::array![[0.5, 0.6]];
        assert!(flatness_stats(m.view()).is_err());
    }

    #[test]
    fn kl_of_uniform_and_point_mass() {
        assert_abs_diff_eq!(kl_to_uniform([0, 1, 2, 3], 4).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_to_uniform([2, 2, 2], 4).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert_eq!(kl_to_uniform([], 4), None);
    }

    proptest! {
        #[test]
        fn histogram_counts_sum_to_len(conf in prop::collection::vec(1e-9f64..=1.0, 0..300), bins in 1usize..40) {
            let h = confidence_histogram(&conf, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), conf.len());
        }

        #[test]
        fn entropy_within_bounds(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..20)) {
            let rows: Vec<Vec<f64>> = raw.into_iter().map(|mut r| {
                r[0] += 1e-3;
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|v| *v /= s);
                r
            }).collect();
            let m = Array2::from_shape_fn((rows.len(), 5), |(i, j)| rows[i][j]);
            let s = flatness_stats(m.view()).unwrap();
            prop_assert!(s.mean_entropy >= -1e-12);
            prop_assert!(s.mean_entropy <= 5f64.ln() + 1e-12);
        }
    }
}
