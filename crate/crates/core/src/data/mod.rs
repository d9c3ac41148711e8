//! Embedding tables, dataset splits, the on-disk container, K-shot sampling
//! and synthetic task generation.

mod bundle;
mod fewshot;
mod io;
mod synth;
mod table;

pub use bundle::DatasetBundle;
pub use fewshot::{sample_few_shot, FewShotSplit};
pub use io::{
    load_bundle, read_f32, read_manifest, read_u32, save_bundle, write_f32, write_u32, Manifest,
    SplitCounts, FORMAT_VERSION, MANIFEST,
};
pub(crate) use io::write_file;
pub use synth::{make_synthetic, SyntheticSpec};
pub use table::{EmbeddingTable, LabeledSplit, NORM_TOLERANCE};
