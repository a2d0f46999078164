//! Classification and calibration metrics, wall-clock timing, the
//! cross-validated experiment driver, and the in- vs out-of-distribution
//! entropy study, together with the plot-ready CSV/JSON exports.
//!
//! Conventions the metrics commit to (the literature varies):
//!
//! * macro-F1 averages over **all** `k` classes; a class absent from both
//!   truth and prediction contributes `F1 = 0`.
//! * ROC-AUC is one-vs-rest with average ranks on ties, macro-averaged over
//!   the classes present in the truth labels.
//! * MCE bins by max-probability confidence into equal-width bins over
//!   `(0, 1]` and takes the worst non-empty bin.
//! * Brier is the summed squared error over classes, averaged over samples
//!   (no `1/k` normalization), so its ceiling is 2.
//! * Fold aggregates report mean and sample standard deviation (`n − 1`).

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    ensemble_predict, mc_dropout_predict, train_ensemble, train_single, BaselineError,
    EnsembleModel, McDropoutConfig,
};
use crate::distill::{train, DistillConfig, DistillError, TrainHistory};
use crate::gnn::{ArchConfig, ForwardMode, GnnError, MultiExitGnn};
use crate::graphdata::{make_batch, stratified_k_fold, DataError, Dataset};
use crate::uncertainty::{entropy, ProbVector, UncertaintyError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Sum after sorting, so the floating-point accumulation is independent of
/// the caller's sample order (metrics promise bit-for-bit order
/// insensitivity).
fn order_free_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric terms are finite"));
    values.iter().sum()
}

fn check_labels(y: &[usize], k: usize, what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(EvalError::InvalidInput(format!("{what}: empty input")));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= k) {
        return Err(EvalError::InvalidInput(format!("{what}: label {bad} outside 0..{k}")));
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over all `k` classes. A class absent from
/// both truth and prediction has no true positives and contributes 0.
pub fn f1_macro(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64> {
    check_labels(y_true, k, "f1_macro truth")?;
    check_labels(y_pred, k, "f1_macro predictions")?;
    if y_true.len() != y_pred.len() {
        return Err(EvalError::InvalidInput(format!(
            "f1_macro: {} truth labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut tp = vec![0.0f64; k];
    let mut fp = vec![0.0f64; k];
    let mut fn_ = vec![0.0f64; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1.0;
        } else {
            fp[p] += 1.0;
            fn_[t] += 1.0;
        }
    }
    let sum: f64 = (0..k)
        .map(|c| {
            let denom = 2.0 * tp[c] + fp[c] + fn_[c];
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp[c] / denom
            }
        })
        .sum();
    Ok(sum / k as f64)
}

/// One-vs-rest AUC for a single class via the Mann–Whitney rank statistic;
/// tied scores receive their average rank.
fn auc_one_vs_rest(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores are finite"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // 1-based average rank of the tie group
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    let rank_sum = order_free_sum(
        ranks.iter().zip(positive).filter(|&(_, &p)| p).map(|(r, _)| *r).collect(),
    );
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

fn check_scores(y_true: &[usize], scores: &[ProbVector], what: &str) -> Result<usize> {
    if scores.is_empty() {
        return Err(EvalError::InvalidInput(format!("{what}: empty input")));
    }
    if y_true.len() != scores.len() {
        return Err(EvalError::InvalidInput(format!(
            "{what}: {} labels vs {} score rows",
            y_true.len(),
            scores.len()
        )));
    }
    let k = scores[0].len();
    if scores.iter().any(|row| row.len() != k) {
        return Err(EvalError::InvalidInput(format!("{what}: ragged score rows")));
    }
    check_labels(y_true, k, what)?;
    Ok(k)
}

/// Macro ROC-AUC, one-vs-rest per class, averaged over the classes that
/// appear in `y_true`. Errors when the truth holds fewer than two classes.
pub fn roc_auc_macro(y_true: &[usize], scores: &[ProbVector]) -> Result<f64> {
    let k = check_scores(y_true, scores, "roc_auc_macro")?;
    let mut present = vec![false; k];
    for &y in y_true {
        present[y] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(EvalError::InvalidInput(
            "roc_auc_macro: truth contains a single class, AUC undefined".into(),
        ));
    }
    let mut total = 0.0;
    let mut classes = 0usize;
    for c in 0..k {
        if !present[c] {
            continue;
        }
        let col: Vec<f64> = scores.iter().map(|row| row.as_slice()[c]).collect();
        let positive: Vec<bool> = y_true.iter().map(|&y| y == c).collect();
        total += auc_one_vs_rest(&col, &positive);
        classes += 1;
    }
    Ok(total / classes as f64)
}

/// Maximum calibration error: bin samples by max-probability confidence into
/// `bins` equal-width bins over `(0, 1]`, skip empty bins, and return the
/// largest gap between bin accuracy and bin mean confidence.
pub fn mce(y_true: &[usize], scores: &[ProbVector], bins: usize) -> Result<f64> {
    check_scores(y_true, scores, "mce")?;
    if bins == 0 {
        return Err(EvalError::InvalidInput("mce: need at least one bin".into()));
    }
    let mut confidences: Vec<Vec<f64>> = vec![Vec::new(); bins];
    let mut correct = vec![0usize; bins];
    for (&y, row) in y_true.iter().zip(scores) {
        let pred = row.argmax();
        let conf = row.as_slice()[pred];
        let bin = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        confidences[bin].push(conf);
        correct[bin] += usize::from(pred == y);
    }
    let mut worst = 0.0f64;
    for b in 0..bins {
        if confidences[b].is_empty() {
            continue;
        }
        let n = confidences[b].len() as f64;
        let mean_conf = order_free_sum(std::mem::take(&mut confidences[b])) / n;
        worst = worst.max((correct[b] as f64 / n - mean_conf).abs());
    }
    Ok(worst)
}

/// Multiclass Brier score: mean over samples of `Σ_c (p_c − 𝟙[y=c])²`
/// (summed over classes, not divided by `k`), so the worst case is 2.
pub fn brier(y_true: &[usize], scores: &[ProbVector]) -> Result<f64> {
    check_scores(y_true, scores, "brier")?;
    let per_sample: Vec<f64> = y_true
        .iter()
        .zip(scores)
        .map(|(&y, row)| {
            row.as_slice()
                .iter()
                .enumerate()
                .map(|(c, &p)| {
                    let target = f64::from(c == y);
                    (p - target) * (p - target)
                })
                .sum::<f64>()
        })
        .collect();
    let score = order_free_sum(per_sample) / y_true.len() as f64;
    assert!(score <= 2.0 + 1e-12, "Brier score {score} exceeds its ceiling");
    Ok(score)
}

/// Run `f` and return its result with the elapsed wall-clock seconds
/// (monotonic).
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// Methods under evaluation
// ---------------------------------------------------------------------------

/// The four methods the experiments compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Single,
    Ensemble,
    McDropout,
    SelfDistill,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Single => "single",
            MethodKind::Ensemble => "ensemble",
            MethodKind::McDropout => "mcdropout",
            MethodKind::SelfDistill => "selfdistill",
        }
    }

    pub const ALL: [MethodKind; 4] =
        [MethodKind::Single, MethodKind::Ensemble, MethodKind::McDropout, MethodKind::SelfDistill];
}

impl std::str::FromStr for MethodKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "single" => Ok(MethodKind::Single),
            "ensemble" => Ok(MethodKind::Ensemble),
            "mcdropout" => Ok(MethodKind::McDropout),
            "selfdistill" => Ok(MethodKind::SelfDistill),
            other => Err(format!(
                "unknown method {other:?}, expected single|ensemble|mcdropout|selfdistill"
            )),
        }
    }
}

/// A trained model behind a method-agnostic prediction interface.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedMethod {
    Single(MultiExitGnn),
    Ensemble(EnsembleModel),
    McDropout { model: MultiExitGnn, config: McDropoutConfig },
    SelfDistill(MultiExitGnn),
}

impl TrainedMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            TrainedMethod::Single(_) => MethodKind::Single,
            TrainedMethod::Ensemble(_) => MethodKind::Ensemble,
            TrainedMethod::McDropout { .. } => MethodKind::McDropout,
            TrainedMethod::SelfDistill(_) => MethodKind::SelfDistill,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TrainedMethod::Single(m) | TrainedMethod::SelfDistill(m) => m.count_parameters(),
            TrainedMethod::McDropout { model, .. } => model.count_parameters(),
            TrainedMethod::Ensemble(e) => e.count_parameters(),
        }
    }

    /// Predictive distribution per graph in `batch`: deepest-exit softmax for
    /// the single and self-distilled models, mean of members for the
    /// ensemble, mean of stochastic passes for MC dropout.
    pub fn predict_batch(&mut self, batch: &crate::graphdata::Batch) -> Result<Vec<ProbVector>> {
        match self {
            TrainedMethod::Single(model) | TrainedMethod::SelfDistill(model) => {
                let (_tape, out, _) = model.forward(batch, ForwardMode::Eval, None)?;
                let probs = &out.probabilities[out.teacher()];
                let k = probs.cols();
                (0..batch.n_graphs())
                    .map(|g| {
                        ProbVector::new(probs.data()[g * k..(g + 1) * k].to_vec())
                            .map_err(EvalError::from)
                    })
                    .collect()
            }
            TrainedMethod::Ensemble(ensemble) => {
                Ok(ensemble_predict(ensemble, batch)?.mean)
            }
            TrainedMethod::McDropout { model, config } => {
                Ok(mc_dropout_predict(model, batch, config)?.mean)
            }
        }
    }

    /// Predict a whole dataset in batches of `batch_size` graphs.
    ///
    /// Evaluation-mode passes use running statistics, so the chunking cannot
    /// change single/ensemble results; MC dropout is deterministic for a
    /// fixed (`seed`, `batch_size`) pair.
    pub fn predict_dataset(
        &mut self,
        dataset: &Dataset,
        batch_size: usize,
    ) -> Result<Vec<ProbVector>> {
        if batch_size == 0 {
            return Err(EvalError::InvalidInput("batch_size must be positive".into()));
        }
        let indices: Vec<usize> = (0..dataset.len()).collect();
        let mut out = Vec::with_capacity(dataset.len());
        for chunk in indices.chunks(batch_size) {
            let batch = make_batch(dataset, chunk)?;
            out.extend(self.predict_batch(&batch)?);
        }
        Ok(out)
    }
}

/// Experiment settings shared by the cross-validation driver and the OOD
/// study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: MethodKind,
    pub arch: ArchConfig,
    pub distill: DistillConfig,
    pub folds: usize,
    pub val_fraction: f64,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    /// Batch size used for inference-time prediction.
    pub eval_batch_size: usize,
}

/// Train one method on the given splits. Member/model seeds derive from
/// `cfg.distill.seed`; pass a fold-offset seed for per-fold variation.
pub fn train_method(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(TrainedMethod, Vec<TrainHistory>)> {
    match cfg.method {
        MethodKind::Single => {
            let (model, hist) = train_single(&cfg.arch, train_set, val_set, &cfg.distill)?;
            Ok((TrainedMethod::Single(model), vec![hist]))
        }
        MethodKind::SelfDistill => {
            let mut rng = StdRng::seed_from_u64(cfg.distill.seed);
            let mut model = MultiExitGnn::new_multi_exit(cfg.arch.clone(), &mut rng)?;
            let hist = train(&mut model, train_set, val_set, &cfg.distill)?;
            Ok((TrainedMethod::SelfDistill(model), vec![hist]))
        }
        MethodKind::Ensemble => {
            let (ensemble, hists) = train_ensemble(
                &cfg.arch,
                train_set,
                val_set,
                &cfg.distill,
                cfg.ensemble_size,
                false,
            )?;
            Ok((TrainedMethod::Ensemble(ensemble), hists))
        }
        MethodKind::McDropout => {
            let (model, hist) = train_single(&cfg.arch, train_set, val_set, &cfg.distill)?;
            let config = McDropoutConfig { samples: cfg.mc_samples, seed: cfg.distill.seed };
            Ok((TrainedMethod::McDropout { model, config }, vec![hist]))
        }
    }
}

// ---------------------------------------------------------------------------
// Cross-validated experiment driver
// ---------------------------------------------------------------------------

/// One row of `metrics.csv`: a method evaluated on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub f1_macro: f64,
    pub roc_auc_macro: f64,
    pub train_time_s: f64,
    pub test_time_s: f64,
    pub mce: f64,
    pub brier: f64,
    pub param_count: usize,
    pub fold: usize,
}

pub const METRICS_CSV_HEADER: &str =
    "method,f1_macro,roc_auc_macro,train_time_s,test_time_s,mce,brier,param_count,fold";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.f1_macro,
            self.roc_auc_macro,
            self.train_time_s,
            self.test_time_s,
            self.mce,
            self.brier,
            self.param_count,
            self.fold
        )
    }
}

/// Evaluate a trained method on a test set, timing the inference pass.
pub fn evaluate_method(
    trained: &mut TrainedMethod,
    test_set: &Dataset,
    eval_batch_size: usize,
    fold: usize,
    train_time_s: f64,
) -> Result<MetricsRow> {
    let (scores, test_time_s) = {
        let (result, elapsed) = timed(|| trained.predict_dataset(test_set, eval_batch_size));
        (result?, elapsed)
    };
    let y_true: Vec<usize> = test_set.graphs.iter().map(|g| g.label).collect();
    let y_pred: Vec<usize> = scores.iter().map(ProbVector::argmax).collect();
    let k = test_set.num_classes;
    Ok(MetricsRow {
        method: trained.kind().as_str().to_string(),
        f1_macro: f1_macro(&y_true, &y_pred, k)?,
        roc_auc_macro: roc_auc_macro(&y_true, &scores)?,
        train_time_s,
        test_time_s,
        mce: mce(&y_true, &scores, 10)?,
        brier: brier(&y_true, &scores)?,
        param_count: trained.param_count(),
        fold,
    })
}

/// Stratified k-fold cross-validation of one method: per fold, train with
/// seed `base_seed + fold`, evaluate on the held-out fold, and collect one
/// [`MetricsRow`]. Folds run sequentially so the timing columns stay
/// comparable.
pub fn run_cv(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let splits = stratified_k_fold(dataset, cfg.folds, cfg.val_fraction, cfg.distill.seed)?;
    let mut rows = Vec::with_capacity(splits.len());
    for split in &splits {
        let train_set = dataset.subset(&split.train, format!("{}-train", dataset.name))?;
        let val_set = dataset.subset(&split.validation, format!("{}-val", dataset.name))?;
        let test_set = dataset.subset(&split.test, format!("{}-test", dataset.name))?;
        let mut fold_cfg = cfg.clone();
        fold_cfg.distill.seed = cfg.distill.seed + split.fold as u64;
        let (trained, train_time_s) = {
            let (result, elapsed) = timed(|| train_method(&fold_cfg, &train_set, &val_set));
            (result?, elapsed)
        };
        let (mut trained, _histories) = trained;
        rows.push(evaluate_method(
            &mut trained,
            &test_set,
            cfg.eval_batch_size,
            split.fold,
            train_time_s,
        )?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Aggregation and reports
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation (`n − 1`; zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    /// `mean ± std` to two decimals, mirroring the results-table layout.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Per-method aggregate across folds, as written into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub folds: usize,
    pub f1_macro: MeanStd,
    pub roc_auc_macro: MeanStd,
    pub train_time_s: MeanStd,
    pub test_time_s: MeanStd,
    pub mce: MeanStd,
    pub brier: MeanStd,
    pub param_count: usize,
    /// `mean ± std` strings, two decimals, in metric column order.
    pub table_row: Vec<String>,
}

/// Aggregate metric rows into per-method summaries. Methods appear in the
/// order of their first row; rows of one method may span any fold subset.
pub fn summarize(rows: &[MetricsRow]) -> Vec<MethodSummary> {
    let mut order: Vec<&str> = Vec::new();
    for row in rows {
        if !order.contains(&row.method.as_str()) {
            order.push(&row.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&MetricsRow) -> f64| {
                MeanStd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let f1 = col(|r| r.f1_macro);
            let auc = col(|r| r.roc_auc_macro);
            let train_t = col(|r| r.train_time_s);
            let test_t = col(|r| r.test_time_s);
            let mce_ = col(|r| r.mce);
            let brier_ = col(|r| r.brier);
            let table_row = vec![
                f1.display(),
                auc.display(),
                train_t.display(),
                test_t.display(),
                mce_.display(),
                brier_.display(),
            ];
            MethodSummary {
                method: method.to_string(),
                folds: group.len(),
                f1_macro: f1,
                roc_auc_macro: auc,
                train_time_s: train_t,
                test_time_s: test_t,
                mce: mce_,
                brier: brier_,
                param_count: group[0].param_count,
                table_row,
            }
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::from(METRICS_CSV_HEADER);
    text.push('\n');
    for row in rows {
        let _ = writeln!(text, "{}", row.csv_line());
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_CSV_HEADER => {}
        other => {
            return Err(EvalError::InvalidInput(format!(
                "{}: bad metrics header {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(EvalError::InvalidInput(format!(
                "{}: line {}: expected 9 fields, got {}",
                path.display(),
                i + 2,
                parts.len()
            )));
        }
        let field = |idx: usize| -> Result<f64> {
            parts[idx].parse::<f64>().map_err(|e| {
                EvalError::InvalidInput(format!(
                    "{}: line {}: field {}: {e}",
                    path.display(),
                    i + 2,
                    idx
                ))
            })
        };
        rows.push(MetricsRow {
            method: parts[0].to_string(),
            f1_macro: field(1)?,
            roc_auc_macro: field(2)?,
            train_time_s: field(3)?,
            test_time_s: field(4)?,
            mce: field(5)?,
            brier: field(6)?,
            param_count: parts[7].parse().map_err(|e| {
                EvalError::InvalidInput(format!("{}: line {}: param_count: {e}", path.display(), i + 2))
            })?,
            fold: parts[8].parse().map_err(|e| {
                EvalError::InvalidInput(format!("{}: line {}: fold: {e}", path.display(), i + 2))
            })?,
        });
    }
    Ok(rows)
}

/// Write `report.json`: fold-aggregated summaries for each method.
pub fn write_report_json(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let json = serde_json::to_string_pretty(&serde_json::json!({ "methods": summaries }))
        .expect("report serializes");
    std::fs::write(path, json).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// ID vs OOD entropy study
// ---------------------------------------------------------------------------

/// Which side of the distribution shift a set of entropies belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Id,
    Ood,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Id => "id",
            Split::Ood => "ood",
        }
    }
}

/// Per-sample predictive entropies of one method on one split, plot-ready.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyExport {
    pub method: String,
    pub split: Split,
    pub values: Vec<f64>,
}

impl EntropyExport {
    /// Validates every entropy against the `[0, ln k]` range (with a small
    /// floating-point allowance above `ln k`).
    pub fn new(
        method: impl Into<String>,
        split: Split,
        values: Vec<f64>,
        num_classes: usize,
    ) -> Result<Self> {
        let cap = (num_classes as f64).ln() + 1e-9;
        if let Some(&bad) = values.iter().find(|&&v| !(0.0..=cap).contains(&v)) {
            return Err(EvalError::InvalidInput(format!(
                "entropy {bad} outside [0, ln {num_classes}]"
            )));
        }
        Ok(Self { method: method.into(), split, values })
    }

    /// Histogram over `[0, ln k]` with `bins` equal-width bins (top edge
    /// inclusive), for the report summary.
    pub fn histogram(&self, num_classes: usize, bins: usize) -> Vec<usize> {
        let cap = (num_classes as f64).ln();
        let mut counts = vec![0usize; bins];
        for &v in &self.values {
            let idx = if cap == 0.0 {
                0
            } else {
                (((v / cap) * bins as f64).floor() as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        counts
    }
}

/// One value per line, full shortest-round-trip precision, no header.
pub fn write_entropy_csv(path: &Path, export: &EntropyExport) -> Result<()> {
    let mut text = String::new();
    for v in &export.values {
        let _ = writeln!(text, "{v}");
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Outcome of the ID-vs-OOD entropy comparison for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub method: String,
    pub id_mean_entropy: f64,
    pub ood_mean_entropy: f64,
    /// True when the method assigns strictly higher mean entropy to OOD
    /// inputs — the qualitative success condition of the study.
    pub separation: bool,
    pub id_histogram: Vec<usize>,
    pub ood_histogram: Vec<usize>,
}

/// Run a trained method over the in-distribution test set and the held-out
/// class and export per-sample predictive entropies for both.
pub fn ood_experiment(
    trained: &mut TrainedMethod,
    id_test: &Dataset,
    ood_set: &Dataset,
    eval_batch_size: usize,
) -> Result<(EntropyExport, EntropyExport)> {
    let method = trained.kind().as_str().to_string();
    let k = id_test.num_classes;
    let entropies = |ds: &Dataset, trained: &mut TrainedMethod| -> Result<Vec<f64>> {
        Ok(trained.predict_dataset(ds, eval_batch_size)?.iter().map(entropy).collect())
    };
    let id = EntropyExport::new(method.clone(), Split::Id, entropies(id_test, trained)?, k)?;
    let ood = EntropyExport::new(method, Split::Ood, entropies(ood_set, trained)?, k)?;
    Ok((id, ood))
}

/// Histogram bin count used in the OOD report.
pub const OOD_HISTOGRAM_BINS: usize = 30;

pub fn ood_summary(id: &EntropyExport, ood: &EntropyExport, num_classes: usize) -> OodSummary {
    let id_mean = MeanStd::of(&id.values).mean;
    let ood_mean = MeanStd::of(&ood.values).mean;
    OodSummary {
        method: id.method.clone(),
        id_mean_entropy: id_mean,
        ood_mean_entropy: ood_mean,
        separation: ood_mean > id_mean,
        id_histogram: id.histogram(num_classes, OOD_HISTOGRAM_BINS),
        ood_histogram: ood.histogram(num_classes, OOD_HISTOGRAM_BINS),
    }
}
