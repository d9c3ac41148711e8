use ndarray::Array2;

use crate::{Error, Result};

/// Norm tolerance for rows of a table flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Dense row-major table of embedding vectors.
///
/// Values are stored as `f32` (the on-disk precision) and widened to `f64`
/// whenever they enter arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize, values: Vec<f32>, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: values.len() % dim,
                context: "table length is not a multiple of dim".into(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding row {}", pos / dim)));
        }
        let table = Self {
            dim,
            values,
            normalized,
        };
        if normalized {
            for (i, row) in table.rows().enumerate() {
                let norm = row_norm(row);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::Config(format!(
                        "row {i} claims unit norm but has norm {norm}"
                    )));
                }
            }
        }
        Ok(table)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            values: Vec::new(),
            normalized: true,
        }
    }

    /// Builds a table from `f64` rows, rounding to storage precision.
    pub fn from_rows_f64(dim: usize, rows: &[Vec<f64>], normalized: bool) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.len(),
                    context: format!("row {i}"),
                });
            }
            values.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(dim, values, normalized)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    /// Scales every row to unit Euclidean norm (computed in `f64`).
    pub fn normalize(&mut self, context: &str) -> Result<()> {
        let dim = self.dim;
        for (i, row) in self.values.chunks_exact_mut(dim).enumerate() {
            let norm = row_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm {
                    row: i,
                    context: context.to_string(),
                });
            }
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
        self.normalized = true;
        Ok(())
    }

    /// Whole table widened to `f64`, shape `count × dim`.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.count(), self.dim), |(i, j)| {
            self.values[i * self.dim + j] as f64
        })
    }

    /// Gathers `indices` into an `f64` batch, shape `indices.len() × dim`.
    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim));
        for (r, &i) in indices.iter().enumerate() {
            for (o, &v) in out.row_mut(r).iter_mut().zip(self.row(i)) {
                *o = v as f64;
            }
        }
        out
    }

    /// New table holding the rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            values,
            normalized: self.normalized,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: other.dim,
                context: "concatenating tables".into(),
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            dim: self.dim,
            values,
            normalized: self.normalized && other.normalized,
        })
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Embeddings paired with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub embeddings: EmbeddingTable,
    pub labels: Vec<usize>,
}

impl LabeledSplit {
    pub fn new(embeddings: EmbeddingTable, labels: Vec<usize>) -> Result<Self> {
        if embeddings.count() != labels.len() {
            return Err(Error::DimMismatch {
                expected: embeddings.count(),
                actual: labels.len(),
                context: "label count vs embedding rows".into(),
            });
        }
        Ok(Self { embeddings, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            embeddings: EmbeddingTable::empty(dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            embeddings: self.embeddings.concat(&other.embeddings)?,
            labels,
        })
    }

    pub(crate) fn check_labels(&self, num_classes: usize, context: &str) -> Result<()> {
        check_labels(&self.labels, num_classes, context)
    }
}

pub(crate) fn check_labels(labels: &[usize], num_classes: usize, context: &str) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::LabelOutOfRange {
            label,
            num_classes,
            context: context.to_string(),
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_values() {
        assert!(EmbeddingTable::new(3, vec![0.0; 7], false).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingTable::new(2, vec![1.0, f32::NAN], false).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn rejects_false_normalized_claim() {
        assert!(EmbeddingTable::new(2, vec![3.0, 4.0], true).is_err());
        assert!(EmbeddingTable::new(2, vec![0.6, 0.8], true).is_ok());
    }

    #[test]
    fn normalize_scales_rows() {
        let mut t = EmbeddingTable::new(2, vec![3.0, 4.0, 0.0, 2.0], false).unwrap();
        t.normalize("test").unwrap();
        assert!(t.is_normalized());
        assert_eq!(t.row(0), &[0.6, 0.8]);
        assert_eq!(t.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut t = EmbeddingTable::new(2, vec![0.0, 0.0], false).unwrap();
        assert!(matches!(t.normalize("x"), Err(Error::ZeroNorm { row: 0, .. })));
    }

    #[test]
    fn gather_widens_in_order() {
        let t = EmbeddingTable::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false).unwrap();
        let g = t.gather(&[2, 0]);
        assert_eq!(g, ndarray::array![[5.0, 6.0], [1.0, 2.0]]);
    }
}
