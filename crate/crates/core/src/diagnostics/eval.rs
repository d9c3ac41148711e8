use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use super::metrics::accuracy;
use crate::data::{EmbeddingTable, LabeledSplit};
use crate::model::Model;
use crate::ssl::argmax_rows;
use crate::Result;

/// Rows per forward chunk. Fixed so results do not depend on thread count.
const CHUNK: usize = 256;

/// Logits for every row of `table`, computed in parallel chunks.
pub fn logits_for(model: &Model, table: &EmbeddingTable) -> Result<Array2<f64>> {
    let n = table.count();
    if n == 0 {
        return Ok(Array2::zeros((0, model.num_classes())));
    }
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + CHUNK).min(n)).collect();
            model.forward(table.gather(&idx).view())
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("chunks share column count"))
}

/// Argmax class per row of `table` (lowest index on ties).
pub fn predict(model: &Model, table: &EmbeddingTable) -> Result<Vec<usize>> {
    Ok(argmax_rows(logits_for(model, table)?.view()))
}

/// Top-1 accuracy on `split`; `None` when the split is empty.
pub fn evaluate(model: &Model, split: &LabeledSplit) -> Result<Option<f64>> {
    if split.is_empty() {
        return Ok(None);
    }
    let preds = predict(model, &split.embeddings)?;
    accuracy(&preds, &split.labels).map(Some)
}
