//! Self-distillation objective and training loop for multi-exit models.
//!
//! The deepest exit (the teacher) trains on plain cross-entropy. Each shallow
//! exit (student) trains on a blend of its own cross-entropy and a KL term
//! pulling its soft labels toward the teacher's, plus a squared-distance
//! penalty aligning its pooled features with the teacher's. Teacher targets
//! are constants in both extra terms: knowledge flows downward only, and the
//! teacher's own gradients are exactly those of plain CE training.
//!
//! With `m` exits, per sample:
//!
//! ```text
//! loss = (1/m) Σ_l [ (1 − α_l)·CE_l  +  α_l·KL(q_l ‖ q_teacher)  +  λ_l·‖h_l − h_teacher‖² ]
//! ```
//!
//! where `α_teacher = λ_teacher = 0` always, and for the final
//! `final_plain_epochs` of a run every exit's `α` and `λ` drop to zero so
//! the network converges on the plain objective.

use std::rc::Rc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{ForwardMode, ForwardOutput, GnnError, MultiExitGnn};
use crate::graphdata::{make_batch, DataError, Dataset};
use crate::numerics::{Adam, AdamConfig, NumericsError, Tape, Tensor, Var};
use crate::uncertainty::PROB_EPS;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, DistillError>;

/// Hyper-parameters of a self-distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Imitation weight shared by the student exits; the teacher's is 0.
    pub alpha: f64,
    /// Feature-penalty weight shared by the student exits; the teacher's is 0.
    /// Zero disables the penalty, collapsing training toward plain CE.
    pub lambda: f64,
    pub epochs: usize,
    /// For this many epochs at the end of the run, every exit's alpha and
    /// lambda are forced to zero (pure cross-entropy) to aid convergence.
    pub final_plain_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Softmax temperature applied to both sides of the KL term only.
    /// 1 leaves the distributions untouched.
    pub temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            lambda: 0.04,
            epochs: 100,
            final_plain_epochs: 20,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            temperature: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(DistillError::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.final_plain_epochs > self.epochs {
            return Err(DistillError::Config(format!(
                "final_plain_epochs ({}) exceeds epochs ({})",
                self.final_plain_epochs, self.epochs
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DistillError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(DistillError::Config("batch_size must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(DistillError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Whether epoch `epoch` (zero-based) of `self.epochs` falls in the
    /// final plain-CE phase.
    pub fn is_plain_epoch(&self, epoch: usize) -> bool {
        epoch + self.final_plain_epochs >= self.epochs
    }
}

/// Cross-entropy of a predicted distribution against a class index:
/// `-ln q_y`, clamped so certain-and-wrong stays finite.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_EPS).ln()
}

/// `KL(student ‖ teacher) = Σ_c q_c ln(q_c / t_c)` in nats, with the teacher
/// side clamped at `1e-12`. Both slices must have equal length.
pub fn kl_student_teacher(student: &[f64], teacher: &[f64]) -> f64 {
    debug_assert_eq!(student.len(), teacher.len());
    let mut total = 0.0;
    for (&q, &t) in student.iter().zip(teacher) {
        if q > 0.0 {
            total += q * (q / t.max(PROB_EPS)).ln();
        }
    }
    total
}

/// Batch-averaged loss components of one forward pass, one entry per exit
/// (shallowest first, teacher last). The `alpha`/`lambda` entries are the
/// weights actually applied — zero for the teacher, and zero everywhere in
/// a plain-CE phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Raw per-exit cross-entropy.
    pub ce_per_exit: Vec<f64>,
    /// Raw per-exit `KL(student ‖ teacher)`; 0 where the term was inactive.
    pub kl_per_exit: Vec<f64>,
    /// Raw per-exit `‖h_l − h_teacher‖²`; 0 where the term was inactive.
    pub penalty_per_exit: Vec<f64>,
    pub alpha_per_exit: Vec<f64>,
    pub lambda_per_exit: Vec<f64>,
}

impl LossBreakdown {
    fn m(&self) -> f64 {
        self.ce_per_exit.len() as f64
    }

    /// The distillation part: `(1/m) Σ_l [(1 − α_l)·CE_l + α_l·KL_l]`.
    pub fn distillation_component(&self) -> f64 {
        let mut sum = 0.0;
        for l in 0..self.ce_per_exit.len() {
            sum += (1.0 - self.alpha_per_exit[l]) * self.ce_per_exit[l]
                + self.alpha_per_exit[l] * self.kl_per_exit[l];
        }
        sum / self.m()
    }

    /// The feature-alignment part: `(1/m) Σ_l λ_l·‖h_l − h_teacher‖²`.
    pub fn penalty_component(&self) -> f64 {
        let mut sum = 0.0;
        for l in 0..self.penalty_per_exit.len() {
            sum += self.lambda_per_exit[l] * self.penalty_per_exit[l];
        }
        sum / self.m()
    }

    /// Re-assemble the total from the stored components. Matches `total`
    /// within accumulation noise — a bookkeeping cross-check.
    pub fn reconstruct_total(&self) -> f64 {
        self.distillation_component() + self.penalty_component()
    }
}

/// Build the full training loss on `tape` from one forward pass.
///
/// `plain` forces every exit to pure cross-entropy (the end-of-run schedule).
/// Teacher soft labels and teacher features enter as constants, so no
/// gradient flows into the teacher from student terms. Returns the scalar
/// loss node and the value-level breakdown.
pub fn build_total_loss(
    tape: &mut Tape,
    output: &ForwardOutput,
    labels: Rc<Vec<usize>>,
    cfg: &DistillConfig,
    plain: bool,
) -> Result<(Var, LossBreakdown)> {
    let m = output.n_exits();
    let teacher = output.teacher();
    let inv_m = 1.0 / m as f64;

    let alpha_of = |l: usize| if plain || l == teacher { 0.0 } else { cfg.alpha };
    let lambda_of = |l: usize| if plain || l == teacher { 0.0 } else { cfg.lambda };

    let any_kl = (0..m).any(|l| alpha_of(l) > 0.0);
    let any_pen = (0..m).any(|l| lambda_of(l) > 0.0);

    // Teacher targets, detached. At temperature 1 the forward pass's own
    // softmax is reused; otherwise re-soften the teacher logits.
    let teacher_probs: Option<Tensor> = if any_kl {
        Some(if cfg.temperature == 1.0 {
            output.probabilities[teacher].clone()
        } else {
            tape.value(output.logits[teacher])
                .scale(1.0 / cfg.temperature)
                .softmax_rows()?
        })
    } else {
        None
    };
    let teacher_feats: Option<Tensor> = if any_pen {
        Some(tape.value(output.features[teacher]).clone())
    } else {
        None
    };

    let mut ce_per_exit = Vec::with_capacity(m);
    let mut kl_per_exit = vec![0.0; m];
    let mut penalty_per_exit = vec![0.0; m];
    let mut alpha_per_exit = Vec::with_capacity(m);
    let mut lambda_per_exit = Vec::with_capacity(m);
    let mut total: Option<Var> = None;
    let mut add_term = |tape: &mut Tape, term: Var| -> Result<()> {
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
        Ok(())
    };

    for l in 0..m {
        let alpha = alpha_of(l);
        let lambda = lambda_of(l);
        alpha_per_exit.push(alpha);
        lambda_per_exit.push(lambda);

        let ce = tape.cross_entropy_with_logits(output.logits[l], labels.clone())?;
        ce_per_exit.push(tape.value(ce).scalar_value());
        let ce_term = tape.scale(ce, (1.0 - alpha) * inv_m);
        add_term(tape, ce_term)?;

        if alpha > 0.0 {
            let student_logits = if cfg.temperature == 1.0 {
                output.logits[l]
            } else {
                tape.scale(output.logits[l], 1.0 / cfg.temperature)
            };
            let kl = tape.kl_to_const(student_logits, teacher_probs.as_ref().unwrap())?;
            kl_per_exit[l] = tape.value(kl).scalar_value();
            let kl_term = tape.scale(kl, alpha * inv_m);
            add_term(tape, kl_term)?;
        }
        if lambda > 0.0 {
            let pen = tape.sq_diff_to_const(output.features[l], teacher_feats.as_ref().unwrap())?;
            penalty_per_exit[l] = tape.value(pen).scalar_value();
            let pen_term = tape.scale(pen, lambda * inv_m);
            add_term(tape, pen_term)?;
        }
    }

    let total_var = total.expect("a model always has at least one exit");
    let breakdown = LossBreakdown {
        total: tape.value(total_var).scalar_value(),
        ce_per_exit,
        kl_per_exit,
        penalty_per_exit,
        alpha_per_exit,
        lambda_per_exit,
    };
    Ok((total_var, breakdown))
}

/// One epoch's worth of history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Whether this epoch ran in the final plain-CE phase.
    pub plain_phase: bool,
    /// Graph-weighted average of the mini-batch breakdowns.
    pub train_loss: LossBreakdown,
    /// Whole-validation-set breakdown in eval mode.
    pub val_loss: LossBreakdown,
    /// The model-selection criterion: validation teacher cross-entropy.
    pub val_teacher_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the returned model carries (lowest validation
    /// teacher CE), if any epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_teacher_ce: Option<f64>,
}

/// Tensors validate eagerly, so a numerical blow-up usually surfaces as a
/// [`NumericsError::NonFinite`] from deep inside a forward pass rather than
/// as a non-finite loss total. Fold both shapes into the one diagnostic
/// callers care about: training diverged.
fn divergence_at(err: DistillError, epoch: usize) -> DistillError {
    match &err {
        DistillError::Numerics(NumericsError::NonFinite { .. })
        | DistillError::Gnn(GnnError::Numerics(NumericsError::NonFinite { .. })) => {
            DistillError::Diverged { epoch, loss: f64::NAN }
        }
        _ => err,
    }
}

/// Mini-batch Adam training of a multi-exit model under the distillation
/// objective, fully deterministic per `cfg.seed`.
///
/// Each epoch shuffles the training set, steps over batches of
/// `cfg.batch_size`, then scores the whole validation set in eval mode. The
/// weights with the lowest validation teacher CE are restored into `model`
/// before returning. A non-finite training loss aborts with
/// [`DistillError::Diverged`]; `epochs = 0` returns the model untouched.
pub fn train(
    model: &mut MultiExitGnn,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &DistillConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: None,
        best_val_teacher_ce: None,
    };
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train_set.is_empty() {
        return Err(DistillError::Config("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(DistillError::Config("validation set is empty".into()));
    }

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let val_indices: Vec<usize> = (0..val_set.len()).collect();
    let mut best: Option<(usize, f64, MultiExitGnn)> = None;

    for epoch in 0..cfg.epochs {
        let plain = cfg.is_plain_epoch(epoch);
        indices.shuffle(&mut rng);

        let m = model.n_exits();
        let mut sums = LossBreakdown {
            total: 0.0,
            ce_per_exit: vec![0.0; m],
            kl_per_exit: vec![0.0; m],
            penalty_per_exit: vec![0.0; m],
            alpha_per_exit: vec![0.0; m],
            lambda_per_exit: vec![0.0; m],
        };
        let mut graphs_seen = 0usize;

        for chunk in indices.chunks(cfg.batch_size) {
            let batch = make_batch(train_set, chunk)?;
            let (mut tape, output, param_vars) = model
                .forward(&batch, ForwardMode::Train, Some(&mut rng))
                .map_err(|e| divergence_at(e.into(), epoch))?;
            let labels = Rc::new(batch.labels.clone());
            let (loss_var, bd) = build_total_loss(&mut tape, &output, labels, cfg, plain)
                .map_err(|e| divergence_at(e, epoch))?;
            if !bd.total.is_finite() {
                return Err(DistillError::Diverged { epoch, loss: bd.total });
            }
            let grads = tape
                .backward(loss_var)
                .map_err(|e| divergence_at(e.into(), epoch))?;

            adam.begin_step();
            let mut slot = 0usize;
            let mut update_err = None;
            model.visit_params_mut(|param| {
                // A parameter the loss never touched (e.g. a harmonizer in a
                // plain-CE epoch) has no adjoint and takes no step.
                if let Some(grad) = grads.get(param_vars[slot]) {
                    if let Err(e) = adam.update(slot, param, grad) {
                        update_err.get_or_insert(e);
                    }
                }
                slot += 1;
            });
            if let Some(e) = update_err {
                return Err(e.into());
            }

            let w = batch.n_graphs() as f64;
            graphs_seen += batch.n_graphs();
            sums.total += bd.total * w;
            for l in 0..m {
                sums.ce_per_exit[l] += bd.ce_per_exit[l] * w;
                sums.kl_per_exit[l] += bd.kl_per_exit[l] * w;
                sums.penalty_per_exit[l] += bd.penalty_per_exit[l] * w;
                // Identical across batches within an epoch; keep the values.
                sums.alpha_per_exit[l] = bd.alpha_per_exit[l];
                sums.lambda_per_exit[l] = bd.lambda_per_exit[l];
            }
        }

        let inv = 1.0 / graphs_seen as f64;
        sums.total *= inv;
        for l in 0..m {
            sums.ce_per_exit[l] *= inv;
            sums.kl_per_exit[l] *= inv;
            sums.penalty_per_exit[l] *= inv;
        }

        // Validation pass: one whole-set batch, deterministic eval mode.
        let val_batch = make_batch(val_set, &val_indices)?;
        let (mut val_tape, val_output, _) = model
            .forward(&val_batch, ForwardMode::Eval, None)
            .map_err(|e| divergence_at(e.into(), epoch))?;
        let val_labels = Rc::new(val_batch.labels.clone());
        let (_, val_bd) = build_total_loss(&mut val_tape, &val_output, val_labels, cfg, plain)
            .map_err(|e| divergence_at(e, epoch))?;
        let val_teacher_ce = val_bd.ce_per_exit[model.n_exits() - 1];

        let improved = match &best {
            None => true,
            Some((_, best_ce, _)) => val_teacher_ce < *best_ce,
        };
        if improved {
            best = Some((epoch, val_teacher_ce, model.clone()));
        }

        history.epochs.push(EpochRecord {
            epoch,
            plain_phase: plain,
            train_loss: sums,
            val_loss: val_bd,
            val_teacher_ce,
        });
    }

    if let Some((epoch, ce, weights)) = best {
        history.best_epoch = Some(epoch);
        history.best_val_teacher_ce = Some(ce);
        *model = weights;
    }
    Ok(history)
}
