//! Semi-supervised few-shot classification over precomputed embeddings.
//!
//! The engine trains a linear head (optionally behind a small residual
//! adapter) on three data sources: a handful of labeled examples per class,
//! a large unlabeled pool with weak and strong views, and a noisy retrieved
//! set. Training runs in three stages:
//!
//! 1. the head is initialized from class-name text embeddings and probed on
//!    the labeled split;
//! 2. FixMatch or DebiasPL self-training with a sharp confidence temperature
//!    and learnable loss temperatures, mixing retrieved data into the labeled
//!    batches;
//! 3. a short finetune on the labeled split only.
//!
//! All arithmetic is 64-bit and every gradient is written out by hand.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};
