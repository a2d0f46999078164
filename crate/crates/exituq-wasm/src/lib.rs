//! Browser bindings for the interactive demo page in `demo/`.
//!
//! Three operations are exposed, all passing JSON strings across the
//! boundary (small payloads, and it keeps the JS side free of generated
//! glue types):
//!
//! * [`quantify_exits`] — score one set of exit predictions: disagreement,
//!   weighted uncertainty (both weight kinds), normalized scores, teacher
//!   entropy, plus a per-exit breakdown for visualization.
//! * [`exit_weights`] — the depth-weight profiles and `UC_max` bounds for a
//!   given number of exits.
//! * [`train_demo`] — generate a small synthetic admissions dataset, train
//!   a multi-exit GNN with self-distillation right in the page, and report
//!   the loss history, test macro-F1, and per-graph uncertainty examples.
//!
//! The logic lives in [`ops`] with plain `String` errors so it can also run
//! (and be tested) on the host; the exported functions are thin wrappers
//! that only translate errors into JavaScript exceptions. Everything is
//! deterministic per seed: the core crate uses seeded `StdRng` streams with
//! no OS entropy, so the same inputs reproduce the same results in every
//! browser.

use wasm_bindgen::prelude::*;

/// Scores one set of exit predictions. Input JSON:
/// `{"students": [[...], ...], "teacher": [...]}` — each row a probability
/// vector over the same classes (sums may be off by up to 1e-3, as typed
/// rows usually are).
#[wasm_bindgen]
pub fn quantify_exits(input_json: &str) -> Result<String, JsError> {
    ops::quantify_exits(input_json).map_err(|e| JsError::new(&e))
}

/// Depth-weight profile and `UC_max` bounds for `m` exits (2 to 16).
#[wasm_bindgen]
pub fn exit_weights(m: usize) -> Result<String, JsError> {
    ops::exit_weights(m).map_err(|e| JsError::new(&e))
}

/// Trains a small multi-exit GNN on synthetic admissions data inside the
/// page. Input JSON: `{"patients": 60, "epochs": 30, "seed": 7,
/// "alpha": 0.6, "lambda": 0.04}`. Sizes are clamped to keep the tab
/// responsive (20-200 patients, 1-100 epochs).
#[wasm_bindgen]
pub fn train_demo(cfg_json: &str) -> Result<String, JsError> {
    ops::train_demo(cfg_json).map_err(|e| JsError::new(&e))
}

/// The demo operations proper, target-independent.
pub mod ops {
    use exituq_core::distill::{train, DistillConfig};
    use exituq_core::evaluation::f1_macro;
    use exituq_core::gnn::{ArchConfig, ForwardMode, LayerKind, MultiExitGnn};
    use exituq_core::graphdata::{
        generate_admissions, make_batch, stratified_k_fold, Dataset, SyntheticConfig,
    };
    use exituq_core::uncertainty::{
        jsd, kl_divergence, quantify, uc_max, weight_linear, weight_nonlinear, ExitPredictions,
        ProbVector, UncertaintyRecord, WeightKind,
    };
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use serde::{Deserialize, Serialize};

    fn s(e: impl std::fmt::Display) -> String {
        e.to_string()
    }

    // ----------------------------------------------------------------------
    // Exit quantification
    // ----------------------------------------------------------------------

    #[derive(Deserialize)]
    struct QuantifyInput {
        /// One probability row per student exit, shallowest first.
        students: Vec<Vec<f64>>,
        /// The deepest (teacher) exit's probability row.
        teacher: Vec<f64>,
    }

    #[derive(Serialize)]
    struct ExitDetail {
        /// 1-based exit index.
        l: usize,
        argmax: usize,
        disagrees: bool,
        kl_to_teacher: f64,
        jsd_to_teacher: f64,
        weight_linear: f64,
        weight_nonlinear: f64,
    }

    #[derive(Serialize)]
    struct QuantifyOutput {
        #[serde(flatten)]
        record: UncertaintyRecord,
        teacher_argmax: usize,
        per_exit: Vec<ExitDetail>,
    }

    pub fn quantify_exits(input_json: &str) -> Result<String, String> {
        let input: QuantifyInput = serde_json::from_str(input_json).map_err(s)?;
        let students: Vec<ProbVector> = input
            .students
            .iter()
            .map(|row| ProbVector::new_with_tolerance(row.clone(), 2e-3))
            .collect::<Result<_, _>>()
            .map_err(s)?;
        let teacher = ProbVector::new_with_tolerance(input.teacher.clone(), 2e-3).map_err(s)?;

        let preds = ExitPredictions::new(students.clone(), teacher.clone()).map_err(s)?;
        let record = quantify(&preds).map_err(s)?;

        let m = students.len() + 1;
        let teacher_argmax = teacher.argmax();
        let per_exit = students
            .iter()
            .enumerate()
            .map(|(i, student)| -> Result<ExitDetail, String> {
                let l = i + 1;
                let disagrees = student.argmax() != teacher_argmax;
                Ok(ExitDetail {
                    l,
                    argmax: student.argmax(),
                    disagrees,
                    kl_to_teacher: kl_divergence(student, &teacher).map_err(s)?,
                    jsd_to_teacher: jsd(student, &teacher).map_err(s)?,
                    weight_linear: weight_linear(l, m, disagrees).map_err(s)?,
                    weight_nonlinear: weight_nonlinear(l, m, disagrees).map_err(s)?,
                })
            })
            .collect::<Result<_, _>>()?;

        let out = QuantifyOutput { record, teacher_argmax, per_exit };
        serde_json::to_string(&out).map_err(s)
    }

    // ----------------------------------------------------------------------
    // Depth-weight profiles
    // ----------------------------------------------------------------------

    #[derive(Serialize)]
    struct WeightRow {
        l: usize,
        linear: f64,
        nonlinear: f64,
    }

    #[derive(Serialize)]
    struct WeightsOutput {
        m: usize,
        /// Disagreement-case weights for the student exits `1..m`.
        weights: Vec<WeightRow>,
        uc_max_linear: f64,
        uc_max_nonlinear: f64,
    }

    pub fn exit_weights(m: usize) -> Result<String, String> {
        if !(2..=16).contains(&m) {
            return Err("m must be between 2 and 16".to_string());
        }
        let weights = (1..m)
            .map(|l| -> Result<WeightRow, String> {
                Ok(WeightRow {
                    l,
                    linear: weight_linear(l, m, true).map_err(s)?,
                    nonlinear: weight_nonlinear(l, m, true).map_err(s)?,
                })
            })
            .collect::<Result<_, _>>()?;
        let out = WeightsOutput {
            m,
            weights,
            uc_max_linear: uc_max(m, WeightKind::Linear).map_err(s)?,
            uc_max_nonlinear: uc_max(m, WeightKind::Nonlinear).map_err(s)?,
        };
        serde_json::to_string(&out).map_err(s)
    }

    // ----------------------------------------------------------------------
    // In-browser training
    // ----------------------------------------------------------------------

    #[derive(Deserialize)]
    struct TrainInput {
        patients: usize,
        epochs: usize,
        seed: u64,
        alpha: f64,
        lambda: f64,
    }

    #[derive(Serialize)]
    struct EpochPoint {
        epoch: usize,
        plain: bool,
        train_total: f64,
        val_teacher_ce: f64,
    }

    #[derive(Serialize)]
    struct Example {
        label: usize,
        prediction: usize,
        correct: bool,
        disagreement: f64,
        uc_norm_linear: f64,
        uc_norm_nonlinear: f64,
        teacher_entropy: f64,
        /// `[exit][class]` probabilities, shallowest first, teacher last.
        exit_probs: Vec<Vec<f64>>,
    }

    #[derive(Serialize)]
    struct TrainOutput {
        num_classes: usize,
        n_train: usize,
        n_test: usize,
        history: Vec<EpochPoint>,
        test_f1: f64,
        examples: Vec<Example>,
    }

    fn exit_predictions_of(
        model: &mut MultiExitGnn,
        dataset: &Dataset,
    ) -> Result<Vec<ExitPredictions>, String> {
        let indices: Vec<usize> = (0..dataset.len()).collect();
        let mut all = Vec::with_capacity(dataset.len());
        for chunk in indices.chunks(32) {
            let batch = make_batch(dataset, chunk).map_err(s)?;
            let (_, out, _) = model.forward(&batch, ForwardMode::Eval, None).map_err(s)?;
            let m = out.n_exits();
            for g in 0..batch.n_graphs() {
                let mut rows: Vec<ProbVector> = Vec::with_capacity(m);
                for l in 0..m {
                    let probs = &out.probabilities[l];
                    let row = probs.row(g).to_vec();
                    rows.push(ProbVector::new_with_tolerance(row, 1e-6).map_err(s)?);
                }
                let teacher = rows.pop().expect("a model always has at least one exit");
                all.push(ExitPredictions::new(rows, teacher).map_err(s)?);
            }
        }
        Ok(all)
    }

    pub fn train_demo(cfg_json: &str) -> Result<String, String> {
        let input: TrainInput = serde_json::from_str(cfg_json).map_err(s)?;
        let patients = input.patients.clamp(20, 200);
        let epochs = input.epochs.clamp(1, 100);
        if !(0.0..=1.0).contains(&input.alpha) {
            return Err("alpha must be in [0, 1]".to_string());
        }
        if !(0.0..=10.0).contains(&input.lambda) {
            return Err("lambda must be in [0, 10]".to_string());
        }

        let ds = generate_admissions(&SyntheticConfig { n_patients: patients, seed: input.seed })
            .map_err(s)?;
        // Fold 0 of a stratified 4-fold split: 25% test, 20% of the rest val.
        let split = &stratified_k_fold(&ds, 4, 0.2, input.seed).map_err(s)?[0];
        let train_set = ds.subset(&split.train, "demo-train").map_err(s)?;
        let val_set = ds.subset(&split.validation, "demo-val").map_err(s)?;
        let test_set = ds.subset(&split.test, "demo-test").map_err(s)?;

        // Three layers, an exit after each: two students plus the teacher.
        let arch = ArchConfig {
            layer_kind: LayerKind::GraphConv,
            input_dim: ds.feature_dim,
            hidden_dims: vec![8, 8, 8],
            num_classes: ds.num_classes,
            head_hidden: 4,
            dropout: 0.1,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        };
        let cfg = DistillConfig {
            alpha: input.alpha,
            lambda: input.lambda,
            epochs,
            final_plain_epochs: epochs / 5,
            batch_size: 16,
            seed: input.seed,
            ..DistillConfig::default()
        };

        let mut rng = StdRng::seed_from_u64(input.seed);
        let mut model = MultiExitGnn::new_multi_exit(arch, &mut rng).map_err(s)?;
        let hist = train(&mut model, &train_set, &val_set, &cfg).map_err(s)?;

        let history = hist
            .epochs
            .iter()
            .map(|e| EpochPoint {
                epoch: e.epoch,
                plain: e.plain_phase,
                train_total: e.train_loss.total,
                val_teacher_ce: e.val_teacher_ce,
            })
            .collect();

        let preds = exit_predictions_of(&mut model, &test_set)?;
        let y_true: Vec<usize> = test_set.graphs.iter().map(|g| g.label).collect();
        let y_pred: Vec<usize> = preds.iter().map(|p| p.teacher().argmax()).collect();
        let test_f1 = f1_macro(&y_true, &y_pred, ds.num_classes).map_err(s)?;

        let examples = preds
            .iter()
            .zip(&y_true)
            .take(10)
            .map(|(p, &label)| -> Result<Example, String> {
                let rec = quantify(p).map_err(s)?;
                let prediction = *rec.exit_argmax.last().unwrap();
                Ok(Example {
                    label,
                    prediction,
                    correct: prediction == label,
                    disagreement: rec.disagreement,
                    uc_norm_linear: rec.uc_norm_linear,
                    uc_norm_nonlinear: rec.uc_norm_nonlinear,
                    teacher_entropy: rec.teacher_entropy,
                    exit_probs: p
                        .students()
                        .iter()
                        .chain(std::iter::once(p.teacher()))
                        .map(|row| row.as_slice().to_vec())
                        .collect(),
                })
            })
            .collect::<Result<_, _>>()?;

        let out = TrainOutput {
            num_classes: ds.num_classes,
            n_train: train_set.len(),
            n_test: test_set.len(),
            history,
            test_f1,
            examples,
        };
        serde_json::to_string(&out).map_err(s)
    }
}
