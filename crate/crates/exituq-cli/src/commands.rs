//! Implementations of the five subcommands. Each takes a resolved
//! [`RunConfig`], writes its outputs (plus a `config.resolved.cfg` echo)
//! under `config.out`, and is deterministic for a fixed (config, seed) —
//! wall-clock timing columns are the only fields that vary between repeated
//! runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use exituq_core::baselines::{load_ensemble, save_ensemble};
use exituq_core::distill::TrainHistory;
use exituq_core::evaluation::{
    evaluate_method, ood_experiment, ood_summary, read_metrics_csv, summarize, timed,
    train_method, write_entropy_csv, write_metrics_csv, write_report_json,
    ExperimentConfig, MethodKind, MethodSummary, MetricsRow, TrainedMethod,
};
use exituq_core::gnn::{load_checkpoint, save_checkpoint, ForwardMode, MultiExitGnn};
use exituq_core::graphdata::{
    hold_out_class, make_batch, stratified_k_fold, write_tu_dataset, Dataset, FoldSplit,
};
use exituq_core::uncertainty::{quantify, ExitPredictions, ProbVector, SampleFile};

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path, err: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {err}", path.display()))
}

fn experiment_config(cfg: &RunConfig, dataset: &Dataset) -> ExperimentConfig {
    ExperimentConfig {
        method: cfg.method,
        arch: cfg.arch_for(dataset.feature_dim, dataset.num_classes),
        distill: cfg.distill_with_seed(),
        folds: cfg.folds,
        val_fraction: cfg.val_fraction,
        ensemble_size: cfg.ensemble_size,
        mc_samples: cfg.mc_samples,
        eval_batch_size: cfg.eval_batch_size,
    }
}

// ---------------------------------------------------------------------------
// prepare-data
// ---------------------------------------------------------------------------

/// Load (or generate) the configured dataset, write it under
/// `out/data/<name>/` in TU format, and print a summary.
pub fn cmd_prepare_data(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let dataset = cfg.load_dataset()?;
    let dir = cfg.out.join("data").join(&dataset.name);
    write_tu_dataset(&dir, &dataset)?;
    println!("dataset {}: {} graphs, {} classes, {} features/node", dataset.name, dataset.len(), dataset.num_classes, dataset.feature_dim);
    println!("  class counts: {:?}", dataset.class_counts());
    println!(
        "  avg nodes {:.1}, avg edges {:.1}",
        dataset.total_nodes() as f64 / dataset.len() as f64,
        dataset.total_edges() as f64 / dataset.len() as f64
    );
    println!("  written to {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub const HISTORY_CSV_HEADER: &str = "epoch,plain_phase,train_total,val_total,val_teacher_ce";

fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), CliError> {
    let mut text = String::from(HISTORY_CSV_HEADER);
    text.push('\n');
    for rec in &history.epochs {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            rec.epoch,
            u8::from(rec.plain_phase),
            rec.train_loss.total,
            rec.val_loss.total,
            rec.val_teacher_ce
        );
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Save whatever a method trained into under `out`, named by fold.
fn save_fold_artifacts(
    out: &Path,
    fold: usize,
    trained: &TrainedMethod,
    histories: &[TrainHistory],
) -> Result<(), CliError> {
    match trained {
        TrainedMethod::Single(model)
        | TrainedMethod::SelfDistill(model)
        | TrainedMethod::McDropout { model, .. } => {
            save_checkpoint(&out.join(format!("fold_{fold}.json")), model)?;
            write_history_csv(&out.join(format!("history_fold_{fold}.csv")), &histories[0])?;
        }
        TrainedMethod::Ensemble(ensemble) => {
            save_ensemble(&out.join(format!("fold_{fold}")), ensemble)?;
            for (i, hist) in histories.iter().enumerate() {
                write_history_csv(
                    &out.join(format!("history_fold_{fold}_member_{i}.csv")),
                    hist,
                )?;
            }
        }
    }
    Ok(())
}

fn run_fold(
    cfg: &RunConfig,
    exp: &ExperimentConfig,
    dataset: &Dataset,
    split: &FoldSplit,
    record_times: bool,
) -> Result<MetricsRow, CliError> {
    let train_set = dataset.subset(&split.train, format!("{}-train", dataset.name))?;
    let val_set = dataset.subset(&split.validation, format!("{}-val", dataset.name))?;
    let test_set = dataset.subset(&split.test, format!("{}-test", dataset.name))?;
    let mut fold_exp = exp.clone();
    fold_exp.distill.seed = exp.distill.seed + split.fold as u64;
    let (result, train_time) = timed(|| train_method(&fold_exp, &train_set, &val_set));
    let (mut trained, histories) = result?;
    save_fold_artifacts(&cfg.out, split.fold, &trained, &histories)?;
    let mut row = evaluate_method(
        &mut trained,
        &test_set,
        exp.eval_batch_size,
        split.fold,
        train_time,
    )?;
    if !record_times {
        row.train_time_s = 0.0;
        row.test_time_s = 0.0;
    }
    Ok(row)
}

/// Stratified k-fold training of the configured method: one checkpoint and
/// history per fold (per member for ensembles) plus `metrics.csv`.
///
/// `parallel_folds` > 1 runs that many folds concurrently; model outputs are
/// unchanged, but the timing columns are zeroed because concurrent folds
/// contend for cores.
pub fn cmd_train(cfg: &RunConfig, parallel_folds: usize) -> Result<(), CliError> {
    if parallel_folds == 0 {
        return Err(CliError::Usage("--parallel-folds must be at least 1".into()));
    }
    cfg.write_resolved()?;
    let dataset = cfg.load_dataset()?;
    let exp = experiment_config(cfg, &dataset);
    let splits = stratified_k_fold(&dataset, cfg.folds, cfg.val_fraction, cfg.seed)?;

    let record_times = parallel_folds == 1;
    if !record_times {
        eprintln!(
            "note: --parallel-folds {parallel_folds} zeroes the timing columns (folds contend for cores)"
        );
    }

    let mut rows: Vec<MetricsRow> = if record_times {
        let mut rows = Vec::with_capacity(splits.len());
        for split in &splits {
            rows.push(run_fold(cfg, &exp, &dataset, split, true)?);
        }
        rows
    } else {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<MetricsRow, CliError>)>> =
            Mutex::new(Vec::with_capacity(splits.len()));
        std::thread::scope(|scope| {
            for _ in 0..parallel_folds.min(splits.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= splits.len() {
                        break;
                    }
                    let row = run_fold(cfg, &exp, &dataset, &splits[i], false);
                    results.lock().expect("fold results lock").push((i, row));
                });
            }
        });
        let mut collected = results.into_inner().expect("fold results lock");
        collected.sort_by_key(|(i, _)| *i);
        collected
            .into_iter()
            .map(|(_, r)| r)
            .collect::<Result<Vec<_>, _>>()?
    };
    rows.sort_by_key(|r| r.fold);

    let metrics_path = cfg.out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &rows)?;
    for row in &rows {
        println!(
            "fold {}: F1 {:.4}, AUC {:.4}, MCE {:.4}, Brier {:.4}",
            row.fold, row.f1_macro, row.roc_auc_macro, row.mce, row.brier
        );
    }
    let summary = summarize(&rows);
    if let Some(s) = summary.first() {
        println!(
            "{} over {} folds: F1 {}, AUC {}",
            s.method,
            s.folds,
            s.f1_macro.display(),
            s.roc_auc_macro.display()
        );
    }
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// uncertainty
// ---------------------------------------------------------------------------

/// Where the per-sample exit distributions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UncertaintySource {
    /// A multi-exit checkpoint, scored over the configured dataset.
    Checkpoint(PathBuf),
    /// A raw-probability JSON file (`SampleFile` schema).
    Samples(PathBuf),
}

/// Which weighting's columns the report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightChoice {
    Linear,
    Nonlinear,
    Both,
}

impl std::str::FromStr for WeightChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(WeightChoice::Linear),
            "nonlinear" => Ok(WeightChoice::Nonlinear),
            "both" => Ok(WeightChoice::Both),
            other => Err(format!("unknown weights {other:?}, expected linear|nonlinear|both")),
        }
    }
}

impl WeightChoice {
    pub fn csv_header(self) -> &'static str {
        match self {
            WeightChoice::Both => {
                "sample,prediction,disagreement,uc_linear,uc_norm_linear,uc_nonlinear,uc_norm_nonlinear,entropy"
            }
            WeightChoice::Linear => "sample,prediction,disagreement,uc_linear,uc_norm_linear,entropy",
            WeightChoice::Nonlinear => {
                "sample,prediction,disagreement,uc_nonlinear,uc_norm_nonlinear,entropy"
            }
        }
    }
}

fn predictions_from_checkpoint(
    cfg: &RunConfig,
    path: &Path,
) -> Result<Vec<ExitPredictions>, CliError> {
    let mut model: MultiExitGnn = load_checkpoint(path)?;
    if model.n_exits() < 2 {
        return Err(CliError::Usage(format!(
            "checkpoint {} has a single exit; exit-disagreement uncertainty needs a multi-exit \
             (self-distilled) model",
            path.display()
        )));
    }
    let dataset = cfg.load_dataset()?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut preds = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(cfg.eval_batch_size) {
        let batch = make_batch(&dataset, chunk)?;
        let (_tape, out, _) = model.forward(&batch, ForwardMode::Eval, None)?;
        let m = out.probabilities.len();
        let k = dataset.num_classes;
        for g in 0..batch.n_graphs() {
            let row = |exit: usize| -> Result<ProbVector, CliError> {
                let data = &out.probabilities[exit].data()[g * k..(g + 1) * k];
                ProbVector::new(data.to_vec()).map_err(CliError::from)
            };
            let students =
                (0..m - 1).map(row).collect::<Result<Vec<_>, _>>()?;
            preds.push(ExitPredictions::new(students, row(m - 1)?)?);
        }
    }
    Ok(preds)
}

/// Score per-sample uncertainty and write `uncertainty.csv`.
pub fn cmd_uncertainty(
    cfg: &RunConfig,
    source: &UncertaintySource,
    weights: WeightChoice,
) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let preds = match source {
        UncertaintySource::Samples(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let file: SampleFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            file.into_predictions()?
        }
        UncertaintySource::Checkpoint(path) => predictions_from_checkpoint(cfg, path)?,
    };

    let mut text = String::from(weights.csv_header());
    text.push('\n');
    for (i, pred) in preds.iter().enumerate() {
        let rec = quantify(pred)?;
        let prediction = *rec.exit_argmax.last().expect("teacher exit present");
        let _ = write!(text, "{i},{prediction},{}", rec.disagreement);
        match weights {
            WeightChoice::Both => {
                let _ = write!(
                    text,
                    ",{},{},{},{}",
                    rec.uc_linear, rec.uc_norm_linear, rec.uc_nonlinear, rec.uc_norm_nonlinear
                );
            }
            WeightChoice::Linear => {
                let _ = write!(text, ",{},{}", rec.uc_linear, rec.uc_norm_linear);
            }
            WeightChoice::Nonlinear => {
                let _ = write!(text, ",{},{}", rec.uc_nonlinear, rec.uc_norm_nonlinear);
            }
        }
        let _ = writeln!(text, ",{}", rec.teacher_entropy);
    }
    let path = cfg.out.join("uncertainty.csv");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    println!("{} samples scored, report at {}", preds.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ood
// ---------------------------------------------------------------------------

fn ood_model_path(out: &Path, method: MethodKind) -> PathBuf {
    match method {
        MethodKind::Ensemble => out.join("ood_ensemble"),
        _ => out.join("ood_model.json"),
    }
}

fn load_ood_model(cfg: &RunConfig, dir: &Path) -> Result<TrainedMethod, CliError> {
    let path = ood_model_path(dir, cfg.method);
    let trained = match cfg.method {
        MethodKind::Ensemble => TrainedMethod::Ensemble(load_ensemble(&path)?),
        MethodKind::Single => TrainedMethod::Single(load_checkpoint(&path)?),
        MethodKind::SelfDistill => {
            let model = load_checkpoint(&path)?;
            if model.n_exits() < 2 {
                return Err(CliError::Usage(format!(
                    "{}: self-distillation checkpoint must be multi-exit",
                    path.display()
                )));
            }
            TrainedMethod::SelfDistill(model)
        }
        MethodKind::McDropout => TrainedMethod::McDropout {
            model: load_checkpoint(&path)?,
            config: exituq_core::baselines::McDropoutConfig {
                samples: cfg.mc_samples,
                seed: cfg.seed,
            },
        },
    };
    Ok(trained)
}

/// Hold out the configured class, train (or `--load`) the configured method
/// on the remaining classes, and export ID/OOD entropy distributions plus a
/// JSON summary with the separation verdict.
pub fn cmd_ood(cfg: &RunConfig, load: Option<&Path>) -> Result<(), CliError> {
    let holdout = cfg.ood_holdout.ok_or_else(|| {
        CliError::Usage("ood needs a held-out class: set `ood.holdout = <class>` in the config".into())
    })?;
    cfg.write_resolved()?;
    let dataset = cfg.load_dataset()?;
    let (id_set, ood_set) = hold_out_class(&dataset, holdout)?;
    let split = stratified_k_fold(&id_set, cfg.folds, cfg.val_fraction, cfg.seed)?
        .into_iter()
        .next()
        .expect("at least one fold");

    let mut trained = match load {
        Some(dir) => load_ood_model(cfg, dir)?,
        None => {
            let train_set = id_set.subset(&split.train, format!("{}-train", id_set.name))?;
            let val_set = id_set.subset(&split.validation, format!("{}-val", id_set.name))?;
            let mut exp = experiment_config(cfg, &id_set);
            exp.arch.num_classes = id_set.num_classes;
            let (trained, _histories) = train_method(&exp, &train_set, &val_set)?;
            match &trained {
                TrainedMethod::Ensemble(e) => save_ensemble(&ood_model_path(&cfg.out, cfg.method), e)?,
                TrainedMethod::Single(m)
                | TrainedMethod::SelfDistill(m)
                | TrainedMethod::McDropout { model: m, .. } => {
                    save_checkpoint(&ood_model_path(&cfg.out, cfg.method), m)?
                }
            }
            trained
        }
    };

    let id_test = id_set.subset(&split.test, format!("{}-test", id_set.name))?;
    let (id_export, ood_export) =
        ood_experiment(&mut trained, &id_test, &ood_set, cfg.eval_batch_size)?;
    let method = cfg.method.as_str();
    write_entropy_csv(&cfg.out.join(format!("entropy_{method}_id.csv")), &id_export)?;
    write_entropy_csv(&cfg.out.join(format!("entropy_{method}_ood.csv")), &ood_export)?;

    let summary = ood_summary(&id_export, &ood_export, id_set.num_classes);
    let path = cfg.out.join("ood_summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    println!(
        "{method}: mean entropy ID {:.4} vs OOD {:.4} — separation {}",
        summary.id_mean_entropy,
        summary.ood_mean_entropy,
        if summary.separation { "yes" } else { "no" }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn report_table(summaries: &[MethodSummary]) -> String {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<12} {:>5}  {:<13} {:<13} {:<15} {:<13} {:<13} {:<13} {:>9}",
        "method", "folds", "f1", "roc_auc", "train_s", "test_s", "mce", "brier", "params"
    );
    for s in summaries {
        let _ = writeln!(
            text,
            "{:<12} {:>5}  {:<13} {:<13} {:<15} {:<13} {:<13} {:<13} {:>9}",
            s.method,
            s.folds,
            s.f1_macro.display(),
            s.roc_auc_macro.display(),
            s.train_time_s.display(),
            s.test_time_s.display(),
            s.mce.display(),
            s.brier.display(),
            s.param_count
        );
    }
    text
}

/// Aggregate every `metrics.csv` found in `dir` (directly or one level down)
/// into `report.json` and a plain-text `report.txt` table.
pub fn cmd_report(dir: &Path) -> Result<(), CliError> {
    let mut sources: Vec<PathBuf> = Vec::new();
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        sources.push(direct);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let candidate = sub.join("metrics.csv");
        if candidate.is_file() {
            sources.push(candidate);
        }
    }
    if sources.is_empty() {
        return Err(CliError::Usage(format!(
            "no runs found: no metrics.csv under {}",
            dir.display()
        )));
    }

    let mut rows: Vec<MetricsRow> = Vec::new();
    for source in &sources {
        rows.extend(read_metrics_csv(source)?);
    }
    let summaries = summarize(&rows);

    let present: Vec<&str> = summaries.iter().map(|s| s.method.as_str()).collect();
    let missing: Vec<&str> = MethodKind::ALL
        .iter()
        .map(|m| m.as_str())
        .filter(|m| !present.contains(m))
        .collect();
    if !missing.is_empty() {
        eprintln!(
            "warning: partial results — {} of 4 methods present, missing: {}",
            present.len(),
            missing.join(", ")
        );
    }

    write_report_json(&dir.join("report.json"), &summaries)?;
    let table = report_table(&summaries);
    std::fs::write(dir.join("report.txt"), &table)
        .map_err(|e| io_err(&dir.join("report.txt"), e))?;
    print!("{table}");
    Ok(())
}
