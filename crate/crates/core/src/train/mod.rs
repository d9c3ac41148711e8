//! The three-stage training pipeline, AdamW and the cosine schedule.

mod config;
mod optim;
mod sampler;
mod stages;

pub use config::{DebiasPlacement, HeadInit, Method, TrainConfig};
pub use optim::{adamw_step, cosine_lr, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use sampler::{epoch_batches, CyclingSampler};
pub use stages::{
    initial_model, run_stage1, run_stage2, run_stage3, run_swift, run_swift_with, StageRun,
};
