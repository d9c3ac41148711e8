use serde::{Deserialize, Serialize};

use super::eval::logits_for;
use crate::data::DatasetBundle;
use crate::model::Model;
use crate::ssl::select;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_conf: f64,
    pub utilization: f64,
    pub selected: usize,
    /// Pseudo-label accuracy over selected rows (needs hidden truth and at
    /// least one selected row).
    pub pseudo_label_acc: Option<f64>,
    /// Pseudo-label accuracy over every unlabeled row.
    pub pseudo_label_acc_all: Option<f64>,
}

/// Utilization and pseudo-label quality at each confidence temperature in
/// `grid`, from one forward pass over the unlabeled weak views.
pub fn tconf_sweep(
    model: &Model,
    bundle: &DatasetBundle,
    grid: &[f64],
    sigma: f64,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Empty("t_conf grid".into()));
    }
    let logits = logits_for(model, &bundle.unlabeled_weak)?;
    let truth = bundle.unlabeled_truth.as_deref();
    grid.iter()
        .map(|&t| {
            let sel = select(logits.view(), t, sigma)?;
            let (mut hit_sel, mut hit_all) = (0usize, 0usize);
            if let Some(truth) = truth {
                for ((&y, &m), &gt) in sel.pseudo_labels.iter().zip(&sel.mask).zip(truth) {
                    if y == gt {
                        hit_all += 1;
                        if m {
                            hit_sel += 1;
                        }
                    }
                }
            }
            let selected = sel.selected();
            let n = sel.mask.len();
            Ok(SweepRow {
                t_conf: t,
                utilization: sel.utilization,
                selected,
                pseudo_label_acc: (truth.is_some() && selected > 0)
                    .then(|| hit_sel as f64 / selected as f64),
                pseudo_label_acc_all: (truth.is_some() && n > 0).then(|| hit_all as f64 / n as f64),
            })
        })
        .collect()
}
