use serde::{Deserialize, Serialize};

use crate::model::{DEFAULT_CONF_TEMPERATURE, DEFAULT_LOSS_TEMPERATURE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FixMatch,
    DebiasPl,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixmatch" => Ok(Method::FixMatch),
            "debiaspl" => Ok(Method::DebiasPl),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Columns are class-name text embeddings.
    Text,
    /// Uniform fan-in initialization.
    Random,
}

impl std::str::FromStr for HeadInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(HeadInit::Text),
            "random" => Ok(HeadInit::Random),
            other => Err(Error::Config(format!("unknown head init {other:?}"))),
        }
    }
}

/// Where the DebiasPL offset enters pseudo-label selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebiasPlacement {
    /// Offset raw logits, then sharpen by `t_conf`.
    BeforeConfTemperature,
    /// Sharpen by `t_conf`, then offset.
    AfterConfTemperature,
}

/// Every knob of a run. Defaults reproduce the reference recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub stages: Vec<u8>,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    pub batch_size: usize,
    /// Unlabeled batch is `mu * batch_size`.
    pub mu: usize,
    pub lr_head: f64,
    pub lr_adapter: f64,
    pub lr_temperature: f64,
    pub weight_decay: f64,
    pub t_conf: f64,
    pub sigma: f64,
    pub t_loss_init: f64,
    pub learn_t_loss_x: bool,
    pub learn_t_loss_u: bool,
    /// Restart both loss temperatures at `t_loss_init` at every stage.
    pub reset_t_loss: bool,
    pub head_init: HeadInit,
    /// Adapter hidden width; `None` means `dim / 4`.
    pub adapter_hidden: Option<usize>,
    /// Mix retrieved data into stage-2 labeled batches.
    pub retrieval_augmentation: bool,
    /// Fraction of each stage-2 labeled batch drawn from the retrieved set.
    /// `None` draws uniformly from the concatenation of both.
    pub retrieved_fraction: Option<f64>,
    pub debias_lambda: f64,
    pub debias_momentum: f64,
    pub debias_placement: DebiasPlacement,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::FixMatch,
            stages: vec![1, 2, 3],
            epochs_stage1: 50,
            epochs_stage2: 50,
            epochs_stage3: 10,
            batch_size: 32,
            mu: 5,
            lr_head: 1e-4,
            lr_adapter: 1e-6,
            lr_temperature: 1e-4,
            weight_decay: 1e-2,
            t_conf: DEFAULT_CONF_TEMPERATURE,
            sigma: 0.8,
            t_loss_init: DEFAULT_LOSS_TEMPERATURE,
            learn_t_loss_x: true,
            learn_t_loss_u: true,
            reset_t_loss: false,
            head_init: HeadInit::Text,
            adapter_hidden: None,
            retrieval_augmentation: true,
            retrieved_fraction: None,
            debias_lambda: 0.5,
            debias_momentum: 0.999,
            debias_placement: DebiasPlacement::AfterConfTemperature,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return bad("at least one stage must run".into());
        }
        if self.stages.iter().any(|s| !(1..=3).contains(s)) {
            return bad(format!("stages must be drawn from 1, 2, 3: {:?}", self.stages));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("stages must be strictly increasing: {:?}", self.stages));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.mu == 0 {
            return bad("mu must be >= 1".into());
        }
        for (name, v) in [
            ("lr_head", self.lr_head),
            ("lr_adapter", self.lr_adapter),
            ("lr_temperature", self.lr_temperature),
            ("t_conf", self.t_conf),
            ("t_loss_init", self.t_loss_init),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("sigma must be in [0, 1], got {}", self.sigma));
        }
        if let Some(f) = self.retrieved_fraction {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("retrieved_fraction must be in [0, 1], got {f}"));
            }
        }
        if !(0.0..=1.0).contains(&self.debias_momentum) {
            return bad(format!("debias_momentum must be in [0, 1], got {}", self.debias_momentum));
        }
        if !(self.debias_lambda >= 0.0 && self.debias_lambda.is_finite()) {
            return bad(format!("debias_lambda must be >= 0, got {}", self.debias_lambda));
        }
        if self.adapter_hidden == Some(0) {
            return bad("adapter_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn runs_stage(&self, stage: u8) -> bool {
        self.stages.contains(&stage)
    }

    /// Unlabeled samples consumed per stage-2 step.
    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }
}
