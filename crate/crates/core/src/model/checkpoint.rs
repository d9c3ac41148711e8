//! `model.json` (shapes, flags, temperatures) plus `model.f32` holding the
//! head, then the adapter's down and up tables, each row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Adapter, LinearHead, Model, TemperatureSet};
use crate::data::{read_f32, write_f32, write_file};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dim: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub adapter_enabled: bool,
    pub temperatures: TemperatureSet,
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        dim: model.dim(),
        num_classes: model.num_classes(),
        hidden: model.adapter.hidden(),
        adapter_enabled: model.adapter.enabled,
        temperatures: model.temps,
    };
    let json = serde_json::to_string_pretty(&meta).expect("checkpoint meta serializes");
    let mut values = Vec::new();
    for table in [&model.head.weights, &model.adapter.down, &model.adapter.up] {
        values.extend(table.iter().map(|&v| v as f32));
    }
    write_f32(&dir.join("model.f32"), &values)?;
    write_file(&dir.join("model.json"), json.as_bytes())
}

pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|source| Error::Manifest { path, source })?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::FormatVersion(meta.format_version));
    }
    let (d, c, h) = (meta.dim, meta.num_classes, meta.hidden);
    let values = read_f32(&dir.join("model.f32"), d * c + d * h + h * d)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    let table = |offset: usize, rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |(i, j)| values[offset + i * cols + j] as f64)
    };
    let head = LinearHead {
        weights: table(0, d, c),
    };
    let adapter = Adapter {
        enabled: meta.adapter_enabled,
        down: table(d * c, d, h),
        up: table(d * c + d * h, h, d),
    };
    Model::new(head, adapter, meta.temperatures)
}
