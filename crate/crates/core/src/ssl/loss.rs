use ndarray::{Array2, ArrayView2};

use super::debias::DebiasState;
use super::select::{select, SelectionResult};
use super::softmax::{check_temperature, softmax_into};
use crate::model::TemperatureSet;
use crate::{Error, Result};

/// Cross-entropy on `logits / t` with its exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CeLoss {
    /// Weighted sum of per-row losses divided by the normalizer.
    pub loss: f64,
    /// Unweighted per-row losses.
    pub per_row: Vec<f64>,
    /// d loss / d logits, same shape as the input.
    pub dlogits: Array2<f64>,
    /// d loss / d t.
    pub dt: f64,
}

impl CeLoss {
    fn empty(cols: usize) -> Self {
        Self {
            loss: 0.0,
            per_row: Vec::new(),
            dlogits: Array2::zeros((0, cols)),
            dt: 0.0,
        }
    }
}

fn check_inputs(logits: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            expected: logits.nrows(),
            actual: labels.len(),
            context: "labels vs logit rows".into(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: logits.ncols(),
            context: "cross-entropy target".into(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss logits".into()));
    }
    Ok(())
}

/// `sum_i w_i * ce(q_i / t + o, y_i) / denom` where `w_i` is 1 for rows with
/// `mask[i]` (all rows when `mask` is `None`) and 0 otherwise, and `o` is an
/// optional per-class offset added after temperature scaling.
///
/// Per row, with `p = softmax(q / t + o)`:
/// `d/dq = (p - onehot(y)) / t` and `d/dt = -(p . q - q_y) / t^2`.
pub(crate) fn masked_ce(
    logits: ArrayView2<f64>,
    labels: &[usize],
    mask: Option<&[bool]>,
    offset: Option<&[f64]>,
    denom: f64,
    t: f64,
) -> Result<CeLoss> {
    check_temperature(t)?;
    check_inputs(logits, labels)?;
    let (n, c) = logits.dim();
    if n == 0 {
        return Ok(CeLoss::empty(c));
    }
    let mut dlogits = Array2::zeros((n, c));
    let mut per_row = Vec::with_capacity(n);
    let mut loss = 0.0;
    let mut dt = 0.0;
    let mut p = vec![0.0; c];
    for (i, (row, mut g)) in logits.outer_iter().zip(dlogits.outer_iter_mut()).enumerate() {
        let q = row.to_vec();
        let y = labels[i];
        // (q + t*o) / t = q / t + o
        let scaled: Vec<f64> = match offset {
            Some(o) => q.iter().zip(o).map(|(a, b)| a + t * b).collect(),
            None => q.clone(),
        };
        let (max, log_sum) = softmax_into(&scaled, t, &mut p);
        let l = (max - scaled[y] / t) + log_sum;
        per_row.push(l);
        if !mask.is_none_or(|m| m[i]) {
            continue;
        }
        loss += l;
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        dt += -(pq - q[y]) / (t * t);
        for (gc, &pc) in g.iter_mut().zip(&p) {
            *gc = pc / (t * denom);
        }
        g[y] -= 1.0 / (t * denom);
    }
    Ok(CeLoss {
        loss: loss / denom,
        per_row,
        dlogits,
        dt: dt / denom,
    })
}

/// Mean temperature-scaled cross-entropy over the batch.
pub fn ce_loss_t(logits: ArrayView2<f64>, labels: &[usize], t: f64) -> Result<CeLoss> {
    masked_ce(logits, labels, None, None, labels.len().max(1) as f64, t)
}

/// Loss on retrieved rows: mean cross-entropy at the labeled-path temperature.
/// An empty retrieved batch contributes exactly zero.
pub fn retrieved_loss(
    logits: ArrayView2<f64>,
    noisy_labels: &[usize],
    temps: &TemperatureSet,
) -> Result<CeLoss> {
    ce_loss_t(logits, noisy_labels, temps.t_loss_x())
}

/// Losses and logit gradients for one FixMatch (or DebiasPL) step.
#[derive(Debug, Clone, PartialEq)]
pub struct FixMatchLosses {
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    /// Unweighted cross-entropy of each labeled row at `T_loss_x`.
    pub labeled_per_row: Vec<f64>,
    pub selection: SelectionResult,
    pub d_labeled: Array2<f64>,
    pub d_strong: Array2<f64>,
    /// d total / d T_loss_x.
    pub d_t_x: f64,
    /// d total / d T_loss_u.
    pub d_t_u: f64,
}

impl FixMatchLosses {
    pub fn total(&self) -> f64 {
        self.labeled_loss + self.unlabeled_loss
    }
}

/// Labeled cross-entropy plus the thresholded pseudo-label loss on strong
/// views.
///
/// Pseudo-labels come from the weak logits sharpened by `T_conf`; they are
/// treated as constants, so no gradient reaches `weak_logits`. Unselected
/// rows add nothing to the unlabeled loss but still count in its
/// denominator. With `debias`, selection runs on debiased weak logits and
/// the strong-view loss carries the matching adaptive margin.
pub fn fixmatch_losses(
    weak_logits: ArrayView2<f64>,
    strong_logits: ArrayView2<f64>,
    labeled_logits: ArrayView2<f64>,
    labels: &[usize],
    temps: &TemperatureSet,
    sigma: f64,
    debias: Option<&DebiasState>,
) -> Result<FixMatchLosses> {
    if weak_logits.dim() != strong_logits.dim() {
        return Err(Error::DimMismatch {
            expected: weak_logits.nrows(),
            actual: strong_logits.nrows(),
            context: "weak vs strong logits".into(),
        });
    }
    if labeled_logits.ncols() != weak_logits.ncols() {
        return Err(Error::DimMismatch {
            expected: weak_logits.ncols(),
            actual: labeled_logits.ncols(),
            context: "labeled vs unlabeled class count".into(),
        });
    }
    let labeled = ce_loss_t(labeled_logits, labels, temps.t_loss_x())?;

    let selection = match debias {
        Some(state) => select(state.adjust(weak_logits).view(), temps.t_conf, sigma)?,
        None => select(weak_logits, temps.t_conf, sigma)?,
    };
    let n_u = weak_logits.nrows();
    let margin = debias.map(DebiasState::offsets);
    let unlabeled = masked_ce(
        strong_logits,
        &selection.pseudo_labels,
        Some(&selection.mask),
        margin.as_deref(),
        n_u.max(1) as f64,
        temps.t_loss_u(),
    )?;
    Ok(FixMatchLosses {
        labeled_loss: labeled.loss,
        unlabeled_loss: unlabeled.loss,
        labeled_per_row: labeled.per_row,
        selection,
        d_labeled: labeled.dlogits,
        d_strong: unlabeled.dlogits,
        d_t_x: labeled.dt,
        d_t_u: unlabeled.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook cross-entropy written independently of the kernel above.
    fn reference_ce(logits: &Array2<f64>, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (row, &y) in logits.outer_iter().zip(labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[y].exp() / z).ln();
        }
        total / labels.len() as f64
    }

    fn random(n: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn offset_is_added_after_scaling() {
        let q = random(4, 5, 11);
        let labels = [0, 3, 4, 1];
        let offset = [-0.5, 0.2, 0.0, -1.3, 0.7];
        let t = 0.07;
        let got = masked_ce(q.view(), &labels, None, Some(&offset), 4.0, t).unwrap();
        let mut shifted = q.mapv(|v| v / t);
        for mut row in shifted.outer_iter_mut() {
            row.iter_mut().zip(&offset).for_each(|(v, o)| *v += o);
        }
        assert_abs_diff_eq!(got.loss, reference_ce(&shifted, &labels), epsilon = 1e-12);
        let h = 1e-6;
        let at = |t: f64| masked_ce(q.view(), &labels, None, Some(&offset), 4.0, t).unwrap().loss;
        let fd = (at(t + h) - at(t - h)) / (2.0 * h);
        assert!((fd - got.dt).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {}", got.dt);
    }

    #[test]
    fn uniform_logits_give_ln_c_at_any_temperature() {
        let q = Array2::from_elem((3, 200), 0.37);
        for t in [0.01, 0.07, 1.0, 4.0] {
            let l = ce_loss_t(q.view(), &[0, 5, 199], t).unwrap();
            assert_abs_diff_eq!(l.loss, 200f64.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(l.loss, 5.29832, epsilon = 1e-5);
        }
    }

    #[test]
    fn unit_gap_values() {
        let q = array![[1.0, 0.0]];
        let l1 = ce_loss_t(q.view(), &[0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(l1.loss, -(e / (e + 1.0)).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(l1.loss, 0.313262, epsilon = 1e-6);
        let l007 = ce_loss_t(q.view(), &[0], 0.07).unwrap();
        let expect = (-1.0f64 / 0.07).exp().ln_1p();
        assert_abs_diff_eq!(l007.loss, expect, epsilon = 1e-15);
        assert!((l007.loss - 6.2e-7).abs() < 0.05e-7);
    }

    #[test]
    fn unit_temperature_matches_textbook_ce() {
        let q = random(7, 5, 3);
        let y = [0, 4, 2, 2, 1, 3, 0];
        let l = ce_loss_t(q.view(), &y, 1.0).unwrap();
        assert_abs_diff_eq!(l.loss, reference_ce(&q, &y), epsilon = 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let q = random(4, 3, 9);
        let y = [2, 0, 1, 1];
        let t = 0.3;
        let l = ce_loss_t(q.view(), &y, t).unwrap();
        let h = 1e-6;
        let f = |q: &Array2<f64>, t: f64| ce_loss_t(q.view(), &y, t).unwrap().loss;
        for i in 0..4 {
            for j in 0..3 {
                let (mut a, mut b) = (q.clone(), q.clone());
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = (f(&a, t) - f(&b, t)) / (2.0 * h);
                assert_abs_diff_eq!(l.dlogits[[i, j]], fd, epsilon = 1e-7);
            }
        }
        let fd_t = (f(&q, t + h) - f(&q, t - h)) / (2.0 * h);
        assert_abs_diff_eq!(l.dt, fd_t, epsilon = 1e-6);
    }

    #[test]
    fn invalid_label_and_temperature() {
        let q = random(2, 3, 1);
        assert!(matches!(
            ce_loss_t(q.view(), &[0, 3], 1.0),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
        assert!(ce_loss_t(q.view(), &[0, 1], 0.0).is_err());
        assert!(ce_loss_t(q.view(), &[0], 1.0).is_err());
    }

    #[test]
    fn empty_retrieved_batch_is_zero() {
        let temps = TemperatureSet::default();
        let l = retrieved_loss(Array2::zeros((0, 4)).view(), &[], &temps).unwrap();
        assert_eq!(l.loss, 0.0);
        assert_eq!(l.dt, 0.0);
        assert_eq!(l.dlogits.nrows(), 0);
    }

    #[test]
    fn mixed_batch_is_mean_over_all_rows() {
        let temps = TemperatureSet::default();
        let lab = random(16, 6, 4);
        let ret = random(16, 6, 5);
        let y_l: Vec<usize> = (0..16).map(|i| i % 6).collect();
        let y_r: Vec<usize> = (0..16).map(|i| (i * 5) % 6).collect();
        let both = ndarray::concatenate![ndarray::Axis(0), lab, ret];
        let y: Vec<usize> = y_l.iter().chain(&y_r).copied().collect();
        let mixed = ce_loss_t(both.view(), &y, temps.t_loss_x()).unwrap();
        let a = ce_loss_t(lab.view(), &y_l, temps.t_loss_x()).unwrap();
        let b = retrieved_loss(ret.view(), &y_r, &temps).unwrap();
        assert_abs_diff_eq!(mixed.loss, (a.loss + b.loss) / 2.0, epsilon = 1e-12);
        let mean_rows = mixed.per_row.iter().sum::<f64>() / 32.0;
        assert_abs_diff_eq!(mixed.loss, mean_rows, epsilon = 1e-12);
    }

    #[test]
    fn empty_mask_zeroes_unlabeled_path() {
        let temps = TemperatureSet::default();
        let weak = random(6, 200, 1);
        let strong = random(6, 200, 2);
        let lab = random(3, 200, 3);
        let out = TemperatureSet {
            t_conf: 1.0,
            ..temps
        };
        let r = fixmatch_losses(weak.view(), strong.view(), lab.view(), &[0, 1, 2], &out, 0.8, None)
            .unwrap();
        assert_eq!(r.selection.utilization, 0.0);
        assert_eq!(r.unlabeled_loss, 0.0);
        assert_eq!(r.d_t_u, 0.0);
        assert!(r.d_strong.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn consistent_confident_views_have_near_zero_unlabeled_loss() {
        let temps = TemperatureSet::default();
        let mut weak = Array2::from_elem((5, 4), -0.5);
        for i in 0..5 {
            weak[[i, i % 4]] = 0.9;
        }
        let r = fixmatch_losses(
            weak.view(),
            weak.view(),
            weak.view(),
            &[0, 1, 2, 3, 0],
            &temps,
            0.8,
            None,
        )
        .unwrap();
        assert_eq!(r.selection.utilization, 1.0);
        assert!(r.unlabeled_loss < 1e-8, "{}", r.unlabeled_loss);
    }

    #[test]
    fn unselected_rows_stay_in_denominator() {
        let temps = TemperatureSet {
            t_conf: 0.01,
            ..TemperatureSet::default()
        };
        // row 0 confident, row 1 flat
        let weak = array![[1.0, 0.0, 0.0], [0.1, 0.1, 0.1]];
        let strong = array![[0.2, 0.1, 0.0], [0.3, 0.2, 0.1]];
        let lab = array![[0.0, 0.0, 0.0]];
        let r = fixmatch_losses(weak.view(), strong.view(), lab.view(), &[0], &temps, 0.8, None)
            .unwrap();
        assert_eq!(r.selection.mask, vec![true, false]);
        let single = ce_loss_t(strong.slice(ndarray::s![0..1, ..]), &[0], temps.t_loss_u()).unwrap();
        assert_abs_diff_eq!(r.unlabeled_loss, single.loss / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unreachable_threshold_reduces_to_labeled_objective() {
        let temps = TemperatureSet::default();
        let weak = random(8, 5, 6);
        let strong = random(8, 5, 7);
        let lab = random(4, 5, 8);
        let y = [0, 1, 2, 3];
        // sigma above any achievable confidence (max prob <= 1)
        let r = fixmatch_losses(weak.view(), strong.view(), lab.view(), &y, &temps, 1.0, None);
        let r = r.unwrap();
        let sup = ce_loss_t(lab.view(), &y, temps.t_loss_x()).unwrap();
        if r.selection.utilization == 0.0 {
            assert_eq!(r.total(), sup.loss);
            assert_eq!(r.d_labeled, sup.dlogits);
        }
    }

    #[test]
    fn weak_perturbation_with_fixed_selection_leaves_gradients() {
        let temps = TemperatureSet {
            t_conf: 0.05,
            ..TemperatureSet::default()
        };
        let weak = random(10, 4, 10);
        let strong = random(10, 4, 11);
        let lab = random(3, 4, 12);
        let y = [1, 2, 3];
        let base = fixmatch_losses(weak.view(), strong.view(), lab.view(), &y, &temps, 0.5, None)
            .unwrap();
        // shift every weak row by a constant: argmax and softmax are unchanged
        let shifted = weak.mapv(|v| v + 0.25);
        let moved = fixmatch_losses(shifted.view(), strong.view(), lab.view(), &y, &temps, 0.5, None)
            .unwrap();
        assert_eq!(base.selection.pseudo_labels, moved.selection.pseudo_labels);
        assert_eq!(base.selection.mask, moved.selection.mask);
        assert_eq!(base.d_strong, moved.d_strong);
        assert_eq!(base.d_labeled, moved.d_labeled);
        assert_eq!(base.d_t_u, moved.d_t_u);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let temps = TemperatureSet::default();
        let a = random(3, 4, 1);
        let b = random(2, 4, 2);
        assert!(fixmatch_losses(a.view(), b.view(), a.view(), &[0, 0, 0], &temps, 0.8, None).is_err());
    }
}
