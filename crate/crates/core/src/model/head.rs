use ndarray::Array2;
use rand::Rng;

use crate::data::EmbeddingTable;
use crate::{Error, Result};

/// Bias-free linear classifier; column `c` is the weight vector of class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `dim × num_classes`.
    pub weights: Array2<f64>,
}

impl LinearHead {
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    /// Uniform `±1/sqrt(dim)` entries, the usual fan-in init for a linear layer.
    pub fn random(dim: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            weights: Array2::from_shape_fn((dim, num_classes), |_| rng.random_range(-bound..bound)),
        }
    }
}

/// Zero-shot classifier: column `c` is the unit-normalized text embedding of
/// class `c`.
pub fn init_head_from_text(text: &EmbeddingTable, num_classes: usize) -> Result<LinearHead> {
    if text.count() != num_classes {
        return Err(Error::DimMismatch {
            expected: num_classes,
            actual: text.count(),
            context: "text rows vs num_classes".into(),
        });
    }
    let mut rows = text.to_array();
    if !text.is_normalized() {
        for (i, mut row) in rows.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm {
                    row: i,
                    context: "text".into(),
                });
            }
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(LinearHead {
        weights: rows.t().to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_text_rows() {
        let text = EmbeddingTable::new(3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8], true).unwrap();
        let head = init_head_from_text(&text, 2).unwrap();
        assert_eq!(head.weights, ndarray::array![[1.0, 0.0], [0.0, 0.6f32 as f64], [0.0, 0.8f32 as f64]]);
    }

    #[test]
    fn normalizes_unflagged_text() {
        let text = EmbeddingTable::new(2, vec![3.0, 4.0, 0.0, 2.0], false).unwrap();
        let head = init_head_from_text(&text, 2).unwrap();
        assert!((head.weights[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((head.weights[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_count_mismatch() {
        let text = EmbeddingTable::new(2, vec![1.0, 0.0], true).unwrap();
        assert!(matches!(
            init_head_from_text(&text, 3),
            Err(Error::DimMismatch { .. })
        ));
    }
}
