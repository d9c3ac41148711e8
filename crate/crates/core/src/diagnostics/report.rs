use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sweep::SweepRow;
use crate::data::{write_file, DatasetBundle};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// One row of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: u8,
    /// 1-based.
    pub epoch: usize,
    /// Mean per-row loss on few-shot labeled rows.
    pub labeled_loss: f64,
    pub unlabeled_loss: Option<f64>,
    /// Mean per-row loss on retrieved rows mixed into labeled batches.
    pub retrieved_loss: Option<f64>,
    pub utilization: Option<f64>,
    /// Over selected rows whose hidden label is known.
    pub pseudo_label_acc: Option<f64>,
    pub pseudo_label_acc_all: Option<f64>,
    /// KL divergence from the selected pseudo-label marginal to uniform.
    pub pseudo_label_kl: Option<f64>,
    pub t_loss_x: f64,
    pub t_loss_u: f64,
    /// Head learning rate at the epoch's last step.
    pub lr: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u8,
    pub epochs: usize,
    pub steps: usize,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub dim: usize,
    pub num_classes: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub retrieved: usize,
    pub test: usize,
    pub strong_views: usize,
    pub has_unlabeled_truth: bool,
}

impl DataSummary {
    pub fn of(bundle: &DatasetBundle) -> Self {
        Self {
            dim: bundle.dim(),
            num_classes: bundle.num_classes,
            labeled: bundle.labeled.len(),
            unlabeled: bundle.num_unlabeled(),
            retrieved: bundle.retrieved.len(),
            test: bundle.test.len(),
            strong_views: bundle.strong_views,
            has_unlabeled_truth: bundle.unlabeled_truth.is_some(),
        }
    }
}

/// Everything a run produced. Contains no timing, so identical inputs give
/// byte-identical serializations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub data: DataSummary,
    pub seed: u64,
    /// Accuracy of the initial head before any training.
    pub initial_test_acc: Option<f64>,
    pub stages: Vec<StageSummary>,
    pub history: Vec<EpochMetrics>,
    pub final_test_acc: Option<f64>,
    /// Utilization in the last stage-2 epoch, if stage 2 ran.
    pub final_utilization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

impl RunReport {
    /// Checks the ordering and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        let ordered = self
            .history
            .windows(2)
            .all(|w| (w[0].stage, w[0].epoch) < (w[1].stage, w[1].epoch));
        if !ordered {
            return Err(Error::Config("history rows out of (stage, epoch) order".into()));
        }
        let finite = |v: Option<f64>| v.is_none_or(f64::is_finite);
        for row in &self.history {
            let values = [
                Some(row.labeled_loss),
                row.unlabeled_loss,
                row.retrieved_loss,
                row.utilization,
                row.pseudo_label_acc,
                row.pseudo_label_acc_all,
                row.pseudo_label_kl,
                Some(row.t_loss_x),
                Some(row.t_loss_u),
                Some(row.lr),
                row.test_acc,
            ];
            if !values.into_iter().all(finite) {
                return Err(Error::NonFinite(format!(
                    "metrics at stage {} epoch {}",
                    row.stage, row.epoch
                )));
            }
        }
        Ok(())
    }

    /// Final-epoch row of `stage`.
    pub fn last_row(&self, stage: u8) -> Option<&EpochMetrics> {
        self.history.iter().rev().find(|r| r.stage == stage)
    }

    pub fn stage_test_acc(&self, stage: u8) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).and_then(|s| s.test_acc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metrics.csv`: one row per epoch, empty cells for absent values.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "stage,epoch,L_l,L_u,L_r,utilization,pseudo_label_acc,T_loss_x,T_loss_u,lr,test_acc\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.epoch,
                r.labeled_loss,
                opt(r.unlabeled_loss),
                opt(r.retrieved_loss),
                opt(r.utilization),
                opt(r.pseudo_label_acc),
                r.t_loss_x,
                r.t_loss_u,
                r.lr,
                opt(r.test_acc),
            );
        }
        out
    }

    /// Writes `report.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.json"), self.to_json().as_bytes())?;
        write_file(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())
    }
}
