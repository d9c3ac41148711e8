use super::table::{check_labels, EmbeddingTable, LabeledSplit};
use crate::{Error, Result};

/// Every split a run needs, sharing one embedding dimension.
///
/// `unlabeled_strong` holds `strong_views` rows per unlabeled sample,
/// sample-major: the views of sample `i` are rows `i*k .. i*k + k`.
/// `unlabeled_truth` is for evaluation only and never reaches a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub labeled: LabeledSplit,
    pub unlabeled_weak: EmbeddingTable,
    pub unlabeled_strong: EmbeddingTable,
    pub strong_views: usize,
    pub unlabeled_truth: Option<Vec<usize>>,
    pub retrieved: LabeledSplit,
    pub test: LabeledSplit,
    pub text: EmbeddingTable,
}

impl DatasetBundle {
    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    pub fn num_unlabeled(&self) -> usize {
        self.unlabeled_weak.count()
    }

    /// Row index of strong view `view` of unlabeled sample `sample`.
    pub fn strong_row(&self, sample: usize, view: usize) -> usize {
        sample * self.strong_views + view
    }

    /// True when every stored table is flagged unit-norm.
    pub fn is_normalized(&self) -> bool {
        self.tables().iter().all(|(_, t)| t.is_normalized())
    }

    fn tables(&self) -> [(&'static str, &EmbeddingTable); 6] {
        [
            ("labeled", &self.labeled.embeddings),
            ("unlabeled.weak", &self.unlabeled_weak),
            ("unlabeled.strong", &self.unlabeled_strong),
            ("retrieved", &self.retrieved.embeddings),
            ("test", &self.test.embeddings),
            ("text", &self.text),
        ]
    }

    /// L2-normalizes every table that is not already flagged unit-norm.
    pub fn normalize(&mut self) -> Result<()> {
        let tables: [(&str, &mut EmbeddingTable); 6] = [
            ("labeled", &mut self.labeled.embeddings),
            ("unlabeled.weak", &mut self.unlabeled_weak),
            ("unlabeled.strong", &mut self.unlabeled_strong),
            ("retrieved", &mut self.retrieved.embeddings),
            ("test", &mut self.test.embeddings),
            ("text", &mut self.text),
        ];
        for (name, table) in tables {
            if !table.is_normalized() {
                table.normalize(name)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let dim = self.dim();
        if dim < 2 {
            return Err(Error::Config(format!("need dim >= 2, got {dim}")));
        }
        for (name, table) in self.tables() {
            if table.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: table.dim(),
                    context: format!("{name} table"),
                });
            }
        }
        if self.text.count() != self.num_classes {
            return Err(Error::DimMismatch {
                expected: self.num_classes,
                actual: self.text.count(),
                context: "text rows vs num_classes".into(),
            });
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::DimMismatch {
                expected: self.num_classes,
                actual: self.class_names.len(),
                context: "class_names vs num_classes".into(),
            });
        }
        if self.strong_views == 0 {
            return Err(Error::Config("strong_views must be >= 1".into()));
        }
        if self.unlabeled_strong.count() != self.strong_views * self.unlabeled_weak.count() {
            return Err(Error::DimMismatch {
                expected: self.strong_views * self.unlabeled_weak.count(),
                actual: self.unlabeled_strong.count(),
                context: "strong view rows vs k * unlabeled".into(),
            });
        }
        self.labeled.check_labels(self.num_classes, "labeled")?;
        self.retrieved.check_labels(self.num_classes, "retrieved")?;
        self.test.check_labels(self.num_classes, "test")?;
        if let Some(truth) = &self.unlabeled_truth {
            if truth.len() != self.unlabeled_weak.count() {
                return Err(Error::DimMismatch {
                    expected: self.unlabeled_weak.count(),
                    actual: truth.len(),
                    context: "unlabeled truth vs unlabeled rows".into(),
                });
            }
            check_labels(truth, self.num_classes, "unlabeled truth")?;
        }
        Ok(())
    }

    /// Per-class row counts of the labeled split.
    pub fn labeled_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labeled.labels {
            counts[l] += 1;
        }
        counts
    }
}
