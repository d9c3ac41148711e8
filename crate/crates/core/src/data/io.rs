//! On-disk container: `manifest.json` plus raw little-endian blobs.
//!
//! ```text
//! manifest.json
//! labeled.f32  labeled.labels.u32
//! unlabeled.weak.f32  unlabeled.strong.f32  [unlabeled.truth.u32]
//! retrieved.f32  retrieved.labels.u32
//! test.f32  test.labels.u32
//! text.f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bundle::DatasetBundle;
use super::table::{EmbeddingTable, LabeledSplit};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub retrieved: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub num_classes: usize,
    pub strong_views: usize,
    pub normalized: bool,
    pub counts: SplitCounts,
    pub class_names: Vec<String>,
    /// Free-form provenance written by upstream tools (augmentation policy,
    /// model id). Carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl Manifest {
    pub fn for_bundle(bundle: &DatasetBundle) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dim: bundle.dim(),
            num_classes: bundle.num_classes,
            strong_views: bundle.strong_views,
            normalized: bundle.is_normalized(),
            counts: SplitCounts {
                labeled: bundle.labeled.len(),
                unlabeled: bundle.num_unlabeled(),
                retrieved: bundle.retrieved.len(),
                test: bundle.test.len(),
            },
            class_names: bundle.class_names.clone(),
            provenance: None,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Manifest { path, source })
}

/// Loads and validates a bundle directory.
///
/// Tables are L2-normalized after loading unless the manifest says they
/// already are.
pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let m = read_manifest(dir)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersion(m.format_version));
    }
    if m.dim == 0 {
        return Err(Error::Config("manifest dim must be positive".into()));
    }
    let table = |name: &str, rows: usize| -> Result<EmbeddingTable> {
        let values = read_f32(&dir.join(name), rows * m.dim)?;
        EmbeddingTable::new(m.dim, values, m.normalized)
    };
    let labels = |name: &str, rows: usize| read_u32(&dir.join(name), rows);

    let c = &m.counts;
    let truth_path = dir.join("unlabeled.truth.u32");
    let unlabeled_truth = if truth_path.exists() {
        Some(read_u32(&truth_path, c.unlabeled)?)
    } else {
        None
    };
    let mut bundle = DatasetBundle {
        num_classes: m.num_classes,
        class_names: m.class_names.clone(),
        labeled: LabeledSplit::new(
            table("labeled.f32", c.labeled)?,
            labels("labeled.labels.u32", c.labeled)?,
        )?,
        unlabeled_weak: table("unlabeled.weak.f32", c.unlabeled)?,
        unlabeled_strong: table("unlabeled.strong.f32", c.unlabeled * m.strong_views)?,
        strong_views: m.strong_views,
        unlabeled_truth,
        retrieved: LabeledSplit::new(
            table("retrieved.f32", c.retrieved)?,
            labels("retrieved.labels.u32", c.retrieved)?,
        )?,
        test: LabeledSplit::new(
            table("test.f32", c.test)?,
            labels("test.labels.u32", c.test)?,
        )?,
        text: table("text.f32", m.num_classes)?,
    };
    bundle.validate()?;
    if !m.normalized {
        bundle.normalize()?;
    }
    Ok(bundle)
}

/// Writes `bundle` to `dir`, replacing any previous contents.
///
/// Blobs go to a sibling staging directory first, which is then renamed
/// into place.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let staging = sibling(dir, "tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let manifest = Manifest::for_bundle(bundle);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&staging.join(MANIFEST), json.as_bytes())?;

    write_f32(&staging.join("labeled.f32"), bundle.labeled.embeddings.values())?;
    write_u32(&staging.join("labeled.labels.u32"), &bundle.labeled.labels)?;
    write_f32(&staging.join("unlabeled.weak.f32"), bundle.unlabeled_weak.values())?;
    write_f32(&staging.join("unlabeled.strong.f32"), bundle.unlabeled_strong.values())?;
    if let Some(truth) = &bundle.unlabeled_truth {
        write_u32(&staging.join("unlabeled.truth.u32"), truth)?;
    }
    write_f32(&staging.join("retrieved.f32"), bundle.retrieved.embeddings.values())?;
    write_u32(&staging.join("retrieved.labels.u32"), &bundle.retrieved.labels)?;
    write_f32(&staging.join("test.f32"), bundle.test.embeddings.values())?;
    write_u32(&staging.join("test.labels.u32"), &bundle.test.labels)?;
    write_f32(&staging.join("text.f32"), bundle.text.values())?;

    replace_dir(&staging, dir)
}

/// Renames `staging` onto `dir`, moving any existing `dir` out of the way.
pub(crate) fn replace_dir(staging: &Path, dir: &Path) -> Result<()> {
    if dir.exists() {
        let old = sibling(dir, "old");
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        fs::rename(staging, dir).map_err(|e| Error::io(dir, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(staging, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bundle".into());
    dir.with_file_name(format!(".{name}.{tag}.{}", std::process::id()))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn write_u32(path: &Path, labels: &[usize]) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        let l = u32::try_from(l).map_err(|_| Error::Config(format!("label {l} exceeds u32")))?;
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    write_file(path, &bytes)
}

fn read_exact_len(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

/// Reads exactly `len` little-endian `f32` values.
pub fn read_f32(path: &Path, len: usize) -> Result<Vec<f32>> {
    let bytes = read_exact_len(path, len * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads exactly `len` little-endian `u32` labels.
pub fn read_u32(path: &Path, len: usize) -> Result<Vec<usize>> {
    let bytes = read_exact_len(path, len * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect())
}
