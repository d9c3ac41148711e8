use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use swift_core::data::{load_bundle, make_synthetic, save_bundle, write_f32, DatasetBundle, SyntheticSpec};
use swift_core::diagnostics::{confidence_histogram, evaluate, flatness_stats, logits_for, tconf_sweep};
use swift_core::model::{load_checkpoint, save_checkpoint, Model};
use swift_core::ssl::softmax_rows;
use swift_core::train::{run_swift_with, TrainConfig};
use swift_core::Error;

use crate::config::load_config;
use crate::error::CliError;
use crate::{ConfigArgs, DataSource, DiagnoseArgs, EvalArgs, ProbeArgs, SynthArgs, TrainArgs};

fn read_spec(path: &Path) -> Result<SyntheticSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("spec {}: {e}", path.display())))
}

fn load_source(source: &DataSource) -> Result<(DatasetBundle, Value), CliError> {
    match (&source.data, &source.synth) {
        (Some(dir), _) => Ok((load_bundle(dir)?, json!({"data": dir}))),
        (None, Some(path)) => {
            let spec = read_spec(path)?;
            Ok((make_synthetic(&spec)?, json!({"synth": spec})))
        }
        (None, None) => unreachable!("clap requires one data source"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn base_config(args: &ConfigArgs) -> Result<TrainConfig, CliError> {
    let mut config = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn check_compatible(model: &Model, bundle: &DatasetBundle) -> Result<(), CliError> {
    if model.dim() != bundle.dim() || model.num_classes() != bundle.num_classes {
        return Err(Error::DimMismatch {
            expected: bundle.dim(),
            actual: model.dim(),
            context: format!(
                "checkpoint has {} classes, bundle has {}",
                model.num_classes(),
                bundle.num_classes
            ),
        }
        .into());
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => read_spec(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let bundle = make_synthetic(&spec)?;
    save_bundle(&bundle, &args.out)?;
    log::info!(
        "wrote {} classes, {} labeled, {} unlabeled, {} retrieved, {} test to {}",
        bundle.num_classes,
        bundle.labeled.len(),
        bundle.num_unlabeled(),
        bundle.retrieved.len(),
        bundle.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn probe(args: ProbeArgs) -> Result<(), CliError> {
    let (bundle, source) = load_source(&args.source)?;
    let mut config = base_config(&args.config)?;
    config.stages = vec![1];
    if let Some(init) = args.init {
        config.head_init = init.into();
    }
    if let Some(t) = args.t_loss {
        config.t_loss_init = t;
    }
    if args.fixed_t {
        config.learn_t_loss_x = false;
        config.learn_t_loss_u = false;
    }
    execute(&bundle, &config, None, source, &args.out)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let (bundle, source) = load_source(&args.source)?;
    let mut config = base_config(&args.config)?;
    if let Some(stages) = args.stages {
        config.stages = stages;
    }
    if let Some(method) = args.method {
        config.method = method.into();
    }
    if args.no_ra {
        config.retrieval_augmentation = false;
    }
    if let Some(init) = args.init {
        config.head_init = init.into();
    }
    let start = match &args.init_from {
        Some(dir) => {
            let model = load_checkpoint(dir)?;
            check_compatible(&model, &bundle)?;
            Some(model)
        }
        None => None,
    };
    execute(&bundle, &config, start, source, &args.out)
}

/// Runs the configured stages, checkpointing each into `out/stageN/`, then
/// writes `report.json`, `metrics.csv`, `timing.json` and `source.json`.
fn execute(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    start: Option<Model>,
    source: Value,
    out: &Path,
) -> Result<(), CliError> {
    config.validate()?;
    create_dir(out)?;
    let began = Instant::now();
    let mut mark = began;
    let mut stage_seconds = Vec::new();
    let (_, report) = run_swift_with(bundle, config, start, |stage, model| {
        save_checkpoint(model, &out.join(format!("stage{stage}")))?;
        let now = Instant::now();
        stage_seconds.push(json!({"stage": stage, "seconds": (now - mark).as_secs_f64()}));
        mark = now;
        log::info!("stage {stage} done in {:.2}s", (now - began).as_secs_f64());
        Ok(())
    })?;
    report.write(out)?;
    let timing = json!({"total_seconds": began.elapsed().as_secs_f64(), "stages": stage_seconds});
    write_text(&out.join("timing.json"), &serde_json::to_string_pretty(&timing).expect("json"))?;
    write_text(&out.join("source.json"), &serde_json::to_string_pretty(&source).expect("json"))?;
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |a| format!("{a:.4}"));
    log::info!(
        "test accuracy {} -> {}",
        fmt(report.initial_test_acc),
        fmt(report.final_test_acc)
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (bundle, _) = load_source(&args.source)?;
    check_compatible(&model, &bundle)?;
    let acc = evaluate(&model, &bundle.test)?;
    println!("{}", json!({"test_acc": acc, "test": bundle.test.len()}));
    Ok(())
}

pub fn diagnose(args: DiagnoseArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (bundle, _) = load_source(&args.source)?;
    check_compatible(&model, &bundle)?;
    if bundle.num_unlabeled() == 0 {
        return Err(Error::Empty("unlabeled split to diagnose".into()).into());
    }
    create_dir(&args.out)?;

    let logits = logits_for(&model, &bundle.unlabeled_weak)?;
    let probs = softmax_rows(logits.view(), args.temperature)?;
    let confidences: Vec<f64> = probs.outer_iter().map(|r| r.fold(0.0f64, |a, &b| a.max(b))).collect();

    let hist = confidence_histogram(&confidences, args.bins)?;
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in hist.counts.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{}", hist.edges[i], hist.edges[i + 1], count);
    }
    write_text(&args.out.join("histogram.csv"), &csv)?;

    let sweep = tconf_sweep(&model, &bundle, &args.grid, args.sigma)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("t_conf,utilization,selected,pseudo_label_acc,pseudo_label_acc_all\n");
    for row in &sweep {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.t_conf,
            row.utilization,
            row.selected,
            opt(row.pseudo_label_acc),
            opt(row.pseudo_label_acc_all)
        );
    }
    write_text(&args.out.join("sweep.csv"), &csv)?;

    let flat = flatness_stats(probs.view())?;
    let flatness = json!({
        "temperature": args.temperature,
        "mean_max_prob": flat.mean_max_prob,
        "mean_entropy": flat.mean_entropy,
        "max_entropy": (bundle.num_classes as f64).ln(),
        "rows": probs.nrows(),
    });
    write_text(&args.out.join("flatness.json"), &serde_json::to_string_pretty(&flatness).expect("json"))?;

    // Heatmap rows grouped by hidden class when it is known.
    let mut order: Vec<usize> = (0..probs.nrows()).collect();
    let row_order = match &bundle.unlabeled_truth {
        Some(truth) => {
            order.sort_by_key(|&i| truth[i]);
            "true_class"
        }
        None => "input",
    };
    let values: Vec<f32> = order
        .iter()
        .flat_map(|&i| flat.matrix.row(i).to_vec())
        .map(|v| v as f32)
        .collect();
    write_f32(&args.out.join("prob_matrix.f32"), &values)?;
    let sidecar = json!({
        "rows": probs.nrows(),
        "cols": probs.ncols(),
        "dtype": "f32",
        "layout": "row-major",
        "normalization": "column max",
        "row_order": row_order,
        "temperature": args.temperature,
    });
    write_text(&args.out.join("prob_matrix.json"), &serde_json::to_string_pretty(&sidecar).expect("json"))?;

    let utils: Vec<String> = sweep.iter().map(|r| format!("{}:{:.3}", r.t_conf, r.utilization)).collect();
    log::info!(
        "mean max-prob {:.4} at T={}; utilization {}",
        flat.mean_max_prob,
        args.temperature,
        utils.join(" ")
    );
    Ok(())
}
