use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

/// Temperature softmax `exp(q_c / t) / sum_j exp(q_j / t)`, max-subtracted.
pub fn softmax_t(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, t, &mut out);
    Ok(out)
}

/// Row-wise [`softmax_t`] over an `n × C` logit matrix.
pub fn softmax_rows(logits: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
    check_temperature(t)?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut o) in logits.outer_iter().zip(out.outer_iter_mut()) {
        let row = row.to_vec();
        softmax_into(&row, t, o.as_slice_mut().expect("standard layout"));
    }
    Ok(out)
}

/// Unchecked kernel: writes the probabilities and returns `(m, s)` with
/// `m = max(q)/t` and `s = ln sum exp(q/t - m)`, so `log sum exp(q/t) = m + s`.
/// Keeping the parts apart avoids cancellation when `m` is subtracted again.
pub(crate) fn softmax_into(logits: &[f64], t: f64, out: &mut [f64]) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let mut sum = 0.0;
    for (o, &q) in out.iter_mut().zip(logits) {
        *o = (q / t - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    (max, sum.ln())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`].
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|r| match r.as_slice() {
            Some(s) => argmax(s),
            None => argmax(&r.to_vec()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_pair() {
        assert_eq!(softmax_t(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn unit_gap_at_t1() {
        let p = softmax_t(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.268941, epsilon = 1e-6);
    }

    #[test]
    fn unit_gap_at_t01() {
        let p = softmax_t(&[1.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / (1.0 + (-10f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.9999546, epsilon = 1e-7);
        assert_abs_diff_eq!(p[1], 0.0000454, epsilon = 1e-7);
    }

    #[test]
    fn rejects_bad_temperature_and_input() {
        assert!(matches!(
            softmax_t(&[1.0], 0.0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(softmax_t(&[1.0], -1.0).is_err());
        assert!(softmax_t(&[f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let p = softmax_t(&[1000.0, 999.0], 0.01).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    proptest! {
        #[test]
        fn normalized_and_argmax_invariant(
            q in prop::collection::vec(-3.0f64..3.0, 2..40),
            t in 0.05f64..5.0,
        ) {
            let p = softmax_t(&q, t).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let p1 = softmax_t(&q, 1.0).unwrap();
            prop_assert_eq!(argmax(&p), argmax(&q));
            prop_assert_eq!(argmax(&p1), argmax(&q));
        }
    }
}
