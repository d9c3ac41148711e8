use log::{info, warn};
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DebiasPlacement, HeadInit, Method, TrainConfig};
use super::optim::{adamw_step, cosine_lr, OptimizerState};
use super::sampler::{epoch_batches, CyclingSampler};
use crate::data::DatasetBundle;
use crate::diagnostics::{evaluate, kl_counts_to_uniform, DataSummary, EpochMetrics, RunReport, StageSummary};
use crate::model::{
    backward, init_head_from_text, Adapter, Gradients, LinearHead, Model, TemperatureSet, Upstream,
};
use crate::ssl::{ce_loss_t, fixmatch_losses, softmax_rows, DebiasState};
use crate::{Error, Result};

/// Per-stage RNG stream offset.
const STAGE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

fn stage_rng(seed: u64, stage: u8) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(STAGE_STREAM.wrapping_mul(stage as u64)))
}

/// The model before any training: text-initialized (or random) head, a
/// disabled adapter with zero output table, loss temperatures at
/// `t_loss_init`.
pub fn initial_model(bundle: &DatasetBundle, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = bundle.dim();
    let head = match config.head_init {
        HeadInit::Text => init_head_from_text(&bundle.text, bundle.num_classes)?,
        HeadInit::Random => LinearHead::random(dim, bundle.num_classes, &mut rng),
    };
    let hidden = config.adapter_hidden.unwrap_or_else(|| Adapter::default_hidden(dim));
    let adapter = Adapter::new(dim, hidden, &mut rng);
    let mut temps = TemperatureSet::new(config.t_conf, config.t_loss_init, true)?;
    temps.learn_x = config.learn_t_loss_x;
    temps.learn_u = config.learn_t_loss_u;
    Model::new(head, adapter, temps)
}

/// Result of one stage.
#[derive(Debug, Clone)]
pub struct StageRun {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub steps: usize,
    pub notices: Vec<String>,
}

impl StageRun {
    pub fn summary(&self, stage: u8) -> StageSummary {
        StageSummary {
            stage,
            epochs: self.history.len(),
            steps: self.steps,
            test_acc: self.history.last().and_then(|r| r.test_acc),
        }
    }
}

/// AdamW state for every parameter tensor, fresh for each stage.
struct Optimizers {
    head: OptimizerState,
    down: OptimizerState,
    up: OptimizerState,
    theta_x: OptimizerState,
    theta_u: OptimizerState,
}

impl Optimizers {
    fn new(model: &Model) -> Self {
        Self {
            head: OptimizerState::new(model.head.weights.len()),
            down: OptimizerState::new(model.adapter.down.len()),
            up: OptimizerState::new(model.adapter.up.len()),
            theta_x: OptimizerState::new(1),
            theta_u: OptimizerState::new(1),
        }
    }

    /// One update at schedule position `step` of `total`. Returns the head
    /// learning rate used.
    fn apply(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        config: &TrainConfig,
        step: usize,
        total: usize,
    ) -> Result<f64> {
        let lr_head = cosine_lr(step, total, config.lr_head);
        let lr_adapter = cosine_lr(step, total, config.lr_adapter);
        let lr_temp = cosine_lr(step, total, config.lr_temperature);
        let wd = config.weight_decay;
        adamw_step(as_slice(&mut model.head.weights), flat(&grads.head), &mut self.head, lr_head, wd)?;
        if model.adapter.enabled {
            adamw_step(as_slice(&mut model.adapter.down), flat(&grads.down), &mut self.down, lr_adapter, wd)?;
            adamw_step(as_slice(&mut model.adapter.up), flat(&grads.up), &mut self.up, lr_adapter, wd)?;
        }
        let temps = &mut model.temps;
        if temps.learn_x {
            adamw_step(std::slice::from_mut(&mut temps.theta_x), &[grads.theta_x], &mut self.theta_x, lr_temp, 0.0)?;
        }
        if temps.learn_u {
            adamw_step(std::slice::from_mut(&mut temps.theta_u), &[grads.theta_u], &mut self.theta_u, lr_temp, 0.0)?;
        }
        temps.project();
        Ok(lr_head)
    }
}

fn as_slice(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tables are contiguous")
}

fn flat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("gradient tables are contiguous")
}

fn diverged(stage: u8, step: usize, what: impl Into<String>) -> Error {
    Error::Diverged {
        stage,
        step,
        what: what.into(),
    }
}

/// Wraps errors raised while stepping so a non-finite value names the stage
/// and step where it appeared.
fn at_step(stage: u8, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => diverged(stage, step, what),
        other => other,
    }
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Cross-entropy training on the labeled split at `T_loss_x` (stages 1 and 3).
fn supervised_stage(
    stage: u8,
    bundle: &DatasetBundle,
    mut model: Model,
    config: &TrainConfig,
    epochs: usize,
) -> Result<StageRun> {
    let labeled = &bundle.labeled;
    let mut run = StageRun {
        model: model.clone(),
        history: Vec::new(),
        steps: 0,
        notices: Vec::new(),
    };
    if epochs == 0 {
        return Ok(run);
    }
    if labeled.is_empty() {
        return Err(Error::Empty(format!("labeled split (stage {stage} trains on it)")));
    }
    let mut rng = stage_rng(config.seed, stage);
    let mut opt = Optimizers::new(&model);
    let per_epoch = labeled.len().div_ceil(config.batch_size);
    let total = epochs * per_epoch;
    let mut step = 0;
    for epoch in 1..=epochs {
        let (mut loss_sum, mut rows, mut lr) = (0.0, 0usize, 0.0);
        for batch in epoch_batches(labeled.len(), config.batch_size, &mut rng) {
            let wrap = at_step(stage, step);
            let x = labeled.embeddings.gather(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labeled.labels[i]).collect();
            let logits = model.forward(x.view())?;
            let ce = ce_loss_t(logits.view(), &y, model.temps.t_loss_x()).map_err(&wrap)?;
            if !ce.loss.is_finite() {
                return Err(diverged(stage, step, "labeled loss"));
            }
            loss_sum += ce.per_row.iter().sum::<f64>();
            rows += y.len();
            let upstream = Upstream {
                dlogits: ce.dlogits,
                d_t_x: ce.dt,
                d_t_u: 0.0,
            };
            let grads = backward(&model, x.view(), &upstream).map_err(&wrap)?;
            lr = opt.apply(&mut model, &grads, config, step, total).map_err(&wrap)?;
            step += 1;
        }
        let test_acc = evaluate(&model, &bundle.test)?;
        run.history.push(EpochMetrics {
            stage,
            epoch,
            labeled_loss: loss_sum / rows as f64,
            unlabeled_loss: None,
            retrieved_loss: None,
            utilization: None,
            pseudo_label_acc: None,
            pseudo_label_acc_all: None,
            pseudo_label_kl: None,
            t_loss_x: model.temps.t_loss_x(),
            t_loss_u: model.temps.t_loss_u(),
            lr,
            test_acc,
        });
    }
    run.model = model;
    run.steps = step;
    Ok(run)
}

/// Stage 1: linear probe of the head on the labeled split, adapter off.
pub fn run_stage1(bundle: &DatasetBundle, model: Model, config: &TrainConfig) -> Result<StageRun> {
    let mut model = model;
    model.adapter.enabled = false;
    supervised_stage(1, bundle, model, config, config.epochs_stage1)
}

/// Stage 3: short finetune of head and adapter on the labeled split only.
pub fn run_stage3(bundle: &DatasetBundle, model: Model, config: &TrainConfig) -> Result<StageRun> {
    if bundle.labeled.is_empty() {
        return Err(Error::Empty("labeled split (stage 3 needs labels)".into()));
    }
    supervised_stage(3, bundle, model, config, config.epochs_stage3)
}

/// Source of one row of a stage-2 labeled batch.
#[derive(Debug, Clone, Copy)]
enum LabeledRow {
    FewShot(usize),
    Retrieved(usize),
}

/// Draws stage-2 labeled batches from L, or from L and R when retrieval
/// augmentation is on.
struct LabeledSource {
    few_shot: CyclingSampler,
    retrieved: CyclingSampler,
    /// Cycles over the concatenation, indices `>= few_shot.len()` are retrieved.
    joint: CyclingSampler,
    fraction: Option<f64>,
    use_retrieved: bool,
}

impl LabeledSource {
    fn new(bundle: &DatasetBundle, config: &TrainConfig) -> Self {
        let use_retrieved = config.retrieval_augmentation && !bundle.retrieved.is_empty();
        let (nl, nr) = (bundle.labeled.len(), bundle.retrieved.len());
        Self {
            few_shot: CyclingSampler::new(nl),
            retrieved: CyclingSampler::new(if use_retrieved { nr } else { 0 }),
            joint: CyclingSampler::new(if use_retrieved { nl + nr } else { nl }),
            fraction: config.retrieved_fraction,
            use_retrieved,
        }
    }

    fn pool_len(&self) -> usize {
        self.joint.len()
    }

    fn draw(&mut self, n: usize, rng: &mut impl Rng) -> Vec<LabeledRow> {
        let nl = self.few_shot.len();
        match self.fraction {
            Some(f) if self.use_retrieved && nl > 0 => {
                let nr = ((f * n as f64).round() as usize).min(n);
                let mut rows: Vec<LabeledRow> =
                    self.few_shot.draw(n - nr, rng).into_iter().map(LabeledRow::FewShot).collect();
                rows.extend(self.retrieved.draw(nr, rng).into_iter().map(LabeledRow::Retrieved));
                rows
            }
            _ => self
                .joint
                .draw(n, rng)
                .into_iter()
                .map(|i| if i < nl { LabeledRow::FewShot(i) } else { LabeledRow::Retrieved(i - nl) })
                .collect(),
        }
    }
}

/// Stage-2 unlabeled pool: U followed by the label-stripped few-shot rows,
/// which serve as their own weak and strong view.
struct UnlabeledPool<'a> {
    bundle: &'a DatasetBundle,
    truth: Option<Vec<usize>>,
}

impl<'a> UnlabeledPool<'a> {
    fn new(bundle: &'a DatasetBundle) -> Self {
        let truth = bundle.unlabeled_truth.as_ref().map(|u| {
            let mut t = u.clone();
            t.extend_from_slice(&bundle.labeled.labels);
            t
        });
        Self { bundle, truth }
    }

    fn len(&self) -> usize {
        self.bundle.num_unlabeled() + self.bundle.labeled.len()
    }

    /// Weak and strong inputs for `indices`, one uniformly drawn strong view
    /// per U sample.
    fn views(&self, indices: &[usize], rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>) {
        let b = self.bundle;
        let nu = b.num_unlabeled();
        let dim = b.dim();
        let mut weak = Array2::zeros((indices.len(), dim));
        let mut strong = Array2::zeros((indices.len(), dim));
        for (r, &i) in indices.iter().enumerate() {
            let (w, s) = if i < nu {
                let view = rng.random_range(0..b.strong_views);
                (b.unlabeled_weak.row(i), b.unlabeled_strong.row(b.strong_row(i, view)))
            } else {
                let row = b.labeled.embeddings.row(i - nu);
                (row, row)
            };
            for (dst, &v) in weak.row_mut(r).iter_mut().zip(w) {
                *dst = v as f64;
            }
            for (dst, &v) in strong.row_mut(r).iter_mut().zip(s) {
                *dst = v as f64;
            }
        }
        (weak, strong)
    }
}

fn gather_labeled(bundle: &DatasetBundle, rows: &[LabeledRow]) -> (Array2<f64>, Vec<usize>) {
    let mut x = Array2::zeros((rows.len(), bundle.dim()));
    let mut y = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let (src, label) = match *row {
            LabeledRow::FewShot(i) => (bundle.labeled.embeddings.row(i), bundle.labeled.labels[i]),
            LabeledRow::Retrieved(i) => (bundle.retrieved.embeddings.row(i), bundle.retrieved.labels[i]),
        };
        for (dst, &v) in x.row_mut(r).iter_mut().zip(src) {
            *dst = v as f64;
        }
        y.push(label);
    }
    (x, y)
}

/// Per-epoch accumulators for stage 2.
#[derive(Default)]
struct Stage2Tally {
    few_shot_loss: f64,
    few_shot_rows: usize,
    retrieved_loss: f64,
    retrieved_rows: usize,
    unlabeled_loss: f64,
    steps: usize,
    seen: usize,
    selected: usize,
    selected_correct: usize,
    all_correct: usize,
    selected_counts: Vec<usize>,
}

/// Stage 2: FixMatch or DebiasPL self-training of head and adapter.
pub fn run_stage2(bundle: &DatasetBundle, model: Model, config: &TrainConfig) -> Result<StageRun> {
    const STAGE: u8 = 2;
    let mut model = model;
    model.adapter.enabled = true;
    model.temps.t_conf = config.t_conf;
    let mut run = StageRun {
        model: model.clone(),
        history: Vec::new(),
        steps: 0,
        notices: Vec::new(),
    };
    let epochs = config.epochs_stage2;
    if epochs == 0 {
        return Ok(run);
    }
    let mut labeled_src = LabeledSource::new(bundle, config);
    let pool = UnlabeledPool::new(bundle);
    if bundle.num_unlabeled() == 0 {
        let msg = "unlabeled split is empty; stage 2 trains on labeled batches plus label-stripped few-shot rows".to_string();
        warn!("{msg}");
        run.notices.push(msg);
    }
    let unlabeled_batch = config.unlabeled_batch();
    let per_epoch = if pool.len() > 0 {
        pool.len().div_ceil(unlabeled_batch)
    } else {
        labeled_src.pool_len().div_ceil(config.batch_size)
    };
    if per_epoch == 0 {
        return Err(Error::Empty("stage 2 has neither labeled nor unlabeled data".into()));
    }
    let mut debias = match config.method {
        Method::FixMatch => None,
        Method::DebiasPl => {
            let mut state =
                DebiasState::new(bundle.num_classes, config.debias_momentum, config.debias_lambda)?;
            if config.debias_placement == DebiasPlacement::AfterConfTemperature {
                state.selection_scale = config.t_conf;
            }
            Some(state)
        }
    };
    let mut rng = stage_rng(config.seed, STAGE);
    let mut unlabeled_src = CyclingSampler::new(pool.len());
    let mut opt = Optimizers::new(&model);
    let total = epochs * per_epoch;
    let mut step = 0;
    for epoch in 1..=epochs {
        let mut tally = Stage2Tally {
            selected_counts: vec![0; bundle.num_classes],
            ..Default::default()
        };
        let mut lr = 0.0;
        for _ in 0..per_epoch {
            let wrap = at_step(STAGE, step);
            let rows = labeled_src.draw(config.batch_size, &mut rng);
            let (x_l, y_l) = gather_labeled(bundle, &rows);
            let u_idx = unlabeled_src.draw(unlabeled_batch, &mut rng);
            let (x_w, x_s) = pool.views(&u_idx, &mut rng);

            let weak = model.forward(x_w.view())?;
            let strong = model.forward(x_s.view())?;
            let labeled = model.forward(x_l.view())?;
            if let Some(state) = debias.as_mut() {
                let probs = softmax_rows(weak.view(), model.temps.t_conf).map_err(&wrap)?;
                state.update(probs.view());
            }
            let out = fixmatch_losses(
                weak.view(),
                strong.view(),
                labeled.view(),
                &y_l,
                &model.temps,
                config.sigma,
                debias.as_ref(),
            )
            .map_err(&wrap)?;
            if !out.total().is_finite() {
                return Err(diverged(STAGE, step, "stage-2 loss"));
            }

            for (row, &l) in rows.iter().zip(&out.labeled_per_row) {
                match row {
                    LabeledRow::FewShot(_) => {
                        tally.few_shot_loss += l;
                        tally.few_shot_rows += 1;
                    }
                    LabeledRow::Retrieved(_) => {
                        tally.retrieved_loss += l;
                        tally.retrieved_rows += 1;
                    }
                }
            }
            tally.unlabeled_loss += out.unlabeled_loss;
            tally.steps += 1;
            let sel = &out.selection;
            tally.seen += u_idx.len();
            tally.selected += sel.selected();
            for y in sel.selected_labels() {
                tally.selected_counts[y] += 1;
            }
            if let Some(truth) = &pool.truth {
                for ((&i, &y), &m) in u_idx.iter().zip(&sel.pseudo_labels).zip(&sel.mask) {
                    if truth[i] == y {
                        tally.all_correct += 1;
                        tally.selected_correct += m as usize;
                    }
                }
            }

            let x = concatenate(Axis(0), &[x_l.view(), x_s.view()]).expect("shared dim");
            let dlogits =
                concatenate(Axis(0), &[out.d_labeled.view(), out.d_strong.view()]).expect("shared classes");
            let upstream = Upstream {
                dlogits,
                d_t_x: out.d_t_x,
                d_t_u: out.d_t_u,
            };
            let grads = backward(&model, x.view(), &upstream).map_err(&wrap)?;
            lr = opt.apply(&mut model, &grads, config, step, total).map_err(&wrap)?;
            step += 1;
        }
        let test_acc = evaluate(&model, &bundle.test)?;
        let has_truth = pool.truth.is_some();
        run.history.push(EpochMetrics {
            stage: STAGE,
            epoch,
            labeled_loss: mean(tally.few_shot_loss, tally.few_shot_rows).unwrap_or(0.0),
            unlabeled_loss: mean(tally.unlabeled_loss, tally.steps),
            retrieved_loss: mean(tally.retrieved_loss, tally.retrieved_rows),
            utilization: mean(tally.selected as f64, tally.seen),
            pseudo_label_acc: if has_truth { mean(tally.selected_correct as f64, tally.selected) } else { None },
            pseudo_label_acc_all: if has_truth { mean(tally.all_correct as f64, tally.seen) } else { None },
            pseudo_label_kl: kl_counts_to_uniform(&tally.selected_counts, tally.selected),
            t_loss_x: model.temps.t_loss_x(),
            t_loss_u: model.temps.t_loss_u(),
            lr,
            test_acc,
        });
        info!(
            "stage 2 epoch {epoch}/{epochs}: utilization {:.3} test {:?}",
            run.history.last().and_then(|r| r.utilization).unwrap_or(0.0),
            test_acc
        );
    }
    run.model = model;
    run.steps = step;
    Ok(run)
}

/// Runs the configured stages from the initial model.
pub fn run_swift(bundle: &DatasetBundle, config: &TrainConfig) -> Result<(Model, RunReport)> {
    run_swift_with(bundle, config, None, |_, _| Ok(()))
}

/// Runs the configured stages in order, starting from `start` when given
/// (otherwise from [`initial_model`]). `on_stage` sees the model after each
/// completed stage.
pub fn run_swift_with(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    start: Option<Model>,
    mut on_stage: impl FnMut(u8, &Model) -> Result<()>,
) -> Result<(Model, RunReport)> {
    config.validate()?;
    bundle.validate()?;
    let mut notices = Vec::new();
    let mut model = match start {
        Some(m) => {
            if m.dim() != bundle.dim() || m.num_classes() != bundle.num_classes {
                return Err(Error::DimMismatch {
                    expected: bundle.dim(),
                    actual: m.dim(),
                    context: "starting model vs bundle".into(),
                });
            }
            m
        }
        None => {
            if !config.runs_stage(1) {
                let msg = format!(
                    "no stage-1 model given; starting stage {} from {} init",
                    config.stages[0],
                    match config.head_init {
                        HeadInit::Text => "text",
                        HeadInit::Random => "random",
                    }
                );
                warn!("{msg}");
                notices.push(msg);
            }
            initial_model(bundle, config)?
        }
    };
    model.temps.t_conf = config.t_conf;
    model.temps.learn_x = config.learn_t_loss_x;
    model.temps.learn_u = config.learn_t_loss_u;
    let initial_test_acc = evaluate(&model, &bundle.test)?;

    let mut stages = Vec::new();
    let mut history = Vec::new();
    let mut final_utilization = None;
    for &stage in &config.stages {
        if config.reset_t_loss {
            model.temps.reset_loss(config.t_loss_init);
        }
        let run = match stage {
            1 => run_stage1(bundle, model, config)?,
            2 => run_stage2(bundle, model, config)?,
            _ => run_stage3(bundle, model, config)?,
        };
        let mut summary = run.summary(stage);
        if summary.test_acc.is_none() {
            summary.test_acc = evaluate(&run.model, &bundle.test)?;
        }
        if stage == 2 {
            final_utilization = run.history.last().and_then(|r| r.utilization);
        }
        on_stage(stage, &run.model)?;
        stages.push(summary);
        history.extend(run.history);
        notices.extend(run.notices);
        model = run.model;
    }
    let final_test_acc = evaluate(&model, &bundle.test)?;
    let report = RunReport {
        config: config.clone(),
        data: DataSummary::of(bundle),
        seed: config.seed,
        initial_test_acc,
        stages,
        history,
        final_test_acc,
        final_utilization,
        sweep: None,
        notices,
    };
    Ok((model, report))
}
