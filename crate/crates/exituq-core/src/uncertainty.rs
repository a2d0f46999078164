//! Disagreement-based uncertainty quantification for multi-exit classifiers.
//!
//! A multi-exit network produces one probability distribution per exit for
//! every input. The deepest exit is the *teacher*; the shallower exits are
//! *students*. When students disagree with the teacher on a sample, that
//! sample sits near a decision boundary the shallow representations cannot
//! resolve, and the disagreement is a single-forward-pass uncertainty signal:
//! no ensembles, no repeated stochastic passes.
//!
//! The pipeline is:
//!
//! 1. `disagreement` — raw sum of KL divergences from each student to the
//!    teacher (a quick diagnostic, not yet depth-aware).
//! 2. `weight_linear` / `weight_nonlinear` — depth-dependent weights applied
//!    only to exits whose argmax disagrees with the teacher's. Deeper
//!    students have seen more of the network, so their dissent counts more.
//! 3. `uc` — the uncertainty score: weighted sum of Jensen–Shannon
//!    divergences from each student to the teacher. JSD is symmetric and
//!    bounded by ln 2, which keeps any one student from dominating.
//! 4. `uc_max` / `uc_norm` — the worst-case score (every student fully
//!    disagreeing) and the score normalised into `[0, 1]` by it.
//!
//! All logarithms are natural. Zero probabilities contribute zero mass terms
//! (`0 ln 0 = 0`), and divisors are clamped at `1e-12` so one-hot collisions
//! stay finite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp applied to denominators inside log-ratios so that a zero probability
/// in the reference distribution yields a large finite divergence instead of
/// infinity. Matches the clamp used by the training losses.
pub const PROB_EPS: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` when validating a probability vector.
pub const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("invalid probability vector: {reason}")]
    InvalidDistribution { reason: String },
    #[error("dimension mismatch: left has {left} classes, right has {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("exit index {l} out of range: weights are defined for student exits 1..={max} (m = {m})")]
    ExitOutOfRange { l: usize, m: usize, max: usize },
    #[error("need at least two exits (one student and the teacher), got m = {m}")]
    TooFewExits { m: usize },
    #[error("sample {index} has {got} student distributions, expected {expected} (m = {m})")]
    WrongStudentCount {
        index: usize,
        got: usize,
        expected: usize,
        m: usize,
    },
}

pub type Result<T> = std::result::Result<T, UncertaintyError>;

/// A validated discrete probability distribution.
///
/// Entries are finite, non-negative, and sum to one within [`SUM_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Strict constructor: entries finite and non-negative, sum within
    /// [`SUM_TOL`] of one. Model outputs (softmax rows) always satisfy this.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::new_with_tolerance(values, SUM_TOL)
    }

    /// Constructor with a caller-chosen sum tolerance, for distributions
    /// transcribed from sources that rounded each entry independently (a
    /// table printed to three decimals can sum to 0.999 or 1.001). The
    /// entries are used exactly as given — no renormalisation — so divergence
    /// values computed from them match the source's published numbers.
    pub fn new_with_tolerance(values: Vec<f64>, sum_tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(UncertaintyError::InvalidDistribution {
                reason: "empty vector".to_string(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(UncertaintyError::InvalidDistribution {
                    reason: format!("entry {i} is not finite ({v})"),
                });
            }
            if v < 0.0 {
                return Err(UncertaintyError::InvalidDistribution {
                    reason: format!("entry {i} is negative ({v})"),
                });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > sum_tol {
            return Err(UncertaintyError::InvalidDistribution {
                reason: format!("entries sum to {sum}, expected 1 within {sum_tol}"),
            });
        }
        Ok(Self { values })
    }

    /// Number of classes.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = UncertaintyError;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.values
    }
}

/// The per-exit distributions a multi-exit model produces for one sample.
///
/// `students` are ordered by depth, shallowest first; `teacher` is the final
/// exit. With `s` students the model has `m = s + 1` exits, and student `i`
/// (zero-based) is exit `l = i + 1` in the 1-based exit numbering the weight
/// functions use.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitPredictions {
    students: Vec<ProbVector>,
    teacher: ProbVector,
}

impl ExitPredictions {
    pub fn new(students: Vec<ProbVector>, teacher: ProbVector) -> Result<Self> {
        if students.is_empty() {
            return Err(UncertaintyError::TooFewExits { m: 1 });
        }
        for s in &students {
            if s.len() != teacher.len() {
                return Err(UncertaintyError::DimensionMismatch {
                    left: s.len(),
                    right: teacher.len(),
                });
            }
        }
        Ok(Self { students, teacher })
    }

    /// Total number of exits, teacher included.
    pub fn num_exits(&self) -> usize {
        self.students.len() + 1
    }

    /// Number of classes.
    pub fn num_classes(&self) -> usize {
        self.teacher.len()
    }

    pub fn students(&self) -> &[ProbVector] {
        &self.students
    }

    pub fn teacher(&self) -> &ProbVector {
        &self.teacher
    }
}

/// Which depth-weighting curve to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// `W(l) = 1 + l/m` on disagreement: linear in exit depth.
    Linear,
    /// `W(l) = 2 - e^(-l)` on disagreement: saturates toward 2 with depth.
    Nonlinear,
}

impl WeightKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightKind::Linear => "linear",
            WeightKind::Nonlinear => "nonlinear",
        }
    }
}

impl std::str::FromStr for WeightKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(WeightKind::Linear),
            "nonlinear" => Ok(WeightKind::Nonlinear),
            other => Err(format!(
                "unknown weight kind {other:?}: expected \"linear\" or \"nonlinear\""
            )),
        }
    }
}

/// Kullback–Leibler divergence `KL(p || q) = sum_c p_c ln(p_c / q_c)` in nats.
///
/// Terms with `p_c = 0` contribute zero; `q_c` is clamped at [`PROB_EPS`] so
/// the result is always finite. Asymmetric and unbounded above.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(UncertaintyError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut total = 0.0;
    for (&pc, &qc) in p.as_slice().iter().zip(q.as_slice()) {
        if pc > 0.0 {
            total += pc * (pc / qc.max(PROB_EPS)).ln();
        }
    }
    Ok(total)
}

/// Raw disagreement of a set of predictors with a reference outcome:
/// the sum of `KL(p_l || outcome)` over the predictors.
///
/// For a multi-exit model the predictors are the student exits and the
/// outcome is the teacher's distribution; the teacher itself contributes
/// nothing (its self-divergence is zero by definition).
pub fn disagreement(predictors: &[ProbVector], outcome: &ProbVector) -> Result<f64> {
    let mut total = 0.0;
    for p in predictors {
        total += kl_divergence(p, outcome)?;
    }
    Ok(total)
}

fn check_exit_index(l: usize, m: usize) -> Result<()> {
    if m < 2 {
        return Err(UncertaintyError::TooFewExits { m });
    }
    if l < 1 || l > m - 1 {
        return Err(UncertaintyError::ExitOutOfRange { l, m, max: m - 1 });
    }
    Ok(())
}

/// Linear depth weight for student exit `l` of `m` total exits (1-based;
/// `1 <= l <= m-1`).
///
/// Exit `l` sits `m - l` blocks from the output, so its weight on
/// disagreement is `1 + (m - (m - l))/m = 1 + l/m`: deeper students (larger
/// `l`) get more say. Agreeing exits keep weight 1. Values lie in `(1, 2)`
/// when disagreeing.
pub fn weight_linear(l: usize, m: usize, disagrees: bool) -> Result<f64> {
    check_exit_index(l, m)?;
    if !disagrees {
        return Ok(1.0);
    }
    Ok(1.0 + l as f64 / m as f64)
}

/// Nonlinear depth weight for student exit `l` of `m` total exits (1-based;
/// `1 <= l <= m-1`).
///
/// With distance-to-output `d = m - l`, the weight on disagreement is
/// `2 - e^(d - m) = 2 - e^(-l)`: it rises steeply for the first few exits
/// and saturates toward 2, so depth differences among already-deep exits
/// matter less than under the linear curve. Agreeing exits keep weight 1.
pub fn weight_nonlinear(l: usize, m: usize, disagrees: bool) -> Result<f64> {
    check_exit_index(l, m)?;
    if !disagrees {
        return Ok(1.0);
    }
    Ok(2.0 - (-(l as f64)).exp())
}

fn weight(kind: WeightKind, l: usize, m: usize, disagrees: bool) -> Result<f64> {
    match kind {
        WeightKind::Linear => weight_linear(l, m, disagrees),
        WeightKind::Nonlinear => weight_nonlinear(l, m, disagrees),
    }
}

/// Depth-weighted disagreement using KL divergence:
/// `sum_l W(l) * KL(P_l || P_teacher)` over the student exits.
///
/// A student "disagrees" when its argmax class differs from the teacher's
/// (ties resolved to the lowest class index on both sides). This is the
/// intermediate form of the score; [`uc`] replaces KL with the bounded,
/// symmetric JSD and is the metric to prefer.
pub fn weighted_disagreement_kl(preds: &ExitPredictions, kind: WeightKind) -> Result<f64> {
    let m = preds.num_exits();
    let teacher_class = preds.teacher().argmax();
    let mut total = 0.0;
    for (i, student) in preds.students().iter().enumerate() {
        let l = i + 1;
        let disagrees = student.argmax() != teacher_class;
        let w = weight(kind, l, m, disagrees)?;
        total += w * kl_divergence(student, preds.teacher())?;
    }
    Ok(total)
}

/// Jensen–Shannon divergence
/// `JSD(p || q) = (KL(p || m) + KL(q || m)) / 2` with `m = (p + q)/2`.
///
/// Symmetric, and bounded in `[0, ln 2]` (the upper bound is attained by
/// distributions with disjoint support).
pub fn jsd(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(UncertaintyError::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    // The mixture of two valid distributions is valid by construction; build
    // it directly rather than round-tripping through validation.
    let mid: Vec<f64> = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&a, &b)| 0.5 * (a + b))
        .collect();
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for ((&pc, &qc), &mc) in p.as_slice().iter().zip(q.as_slice()).zip(&mid) {
        let m_ln = mc.max(PROB_EPS).ln();
        if pc > 0.0 {
            kl_p += pc * (pc.ln() - m_ln);
        }
        if qc > 0.0 {
            kl_q += qc * (qc.ln() - m_ln);
        }
    }
    Ok(0.5 * (kl_p + kl_q))
}

/// Uncertainty score: `UC = sum_l W(l) * JSD(P_l || P_teacher)` over the
/// student exits, with the depth weight applied only where the student's
/// argmax class differs from the teacher's.
pub fn uc(preds: &ExitPredictions, kind: WeightKind) -> Result<f64> {
    let m = preds.num_exits();
    let teacher_class = preds.teacher().argmax();
    let mut total = 0.0;
    for (i, student) in preds.students().iter().enumerate() {
        let l = i + 1;
        let disagrees = student.argmax() != teacher_class;
        let w = weight(kind, l, m, disagrees)?;
        total += w * jsd(student, preds.teacher())?;
    }
    Ok(total)
}

/// Worst-case uncertainty score for an `m`-exit model: every student fully
/// disagrees (`JSD = ln 2`) with the disagreement weight applied:
/// `UC_max = sum_{l=1}^{m-1} W(l | disagree) * ln 2`.
pub fn uc_max(m: usize, kind: WeightKind) -> Result<f64> {
    if m < 2 {
        return Err(UncertaintyError::TooFewExits { m });
    }
    let ln2 = std::f64::consts::LN_2;
    let mut total = 0.0;
    for l in 1..m {
        total += weight(kind, l, m, true)? * ln2;
    }
    Ok(total)
}

/// Normalised uncertainty `UC / UC_max`, guaranteed to lie in `[0, 1]`.
pub fn uc_norm(preds: &ExitPredictions, kind: WeightKind) -> Result<f64> {
    Ok(uc(preds, kind)? / uc_max(preds.num_exits(), kind)?)
}

/// Shannon entropy `-sum_c p_c ln(p_c)` in nats, with `0 ln 0 = 0`.
/// Ranges from 0 (one-hot) to `ln k` (uniform over `k` classes).
pub fn entropy(p: &ProbVector) -> f64 {
    let mut total = 0.0;
    for &pc in p.as_slice() {
        if pc > 0.0 {
            total -= pc * pc.ln();
        }
    }
    total
}

/// Everything the uncertainty pipeline reports for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    /// Argmax class per exit, shallowest student first, teacher last.
    pub exit_argmax: Vec<usize>,
    /// Raw (unweighted) sum of student-to-teacher KL divergences.
    pub disagreement: f64,
    pub uc_linear: f64,
    pub uc_nonlinear: f64,
    pub uc_norm_linear: f64,
    pub uc_norm_nonlinear: f64,
    /// Shannon entropy of the teacher's distribution, in nats.
    pub teacher_entropy: f64,
}

/// Run the full uncertainty pipeline on one sample's exit distributions.
///
/// Computes per-exit predictions, raw disagreement, the weighted score under
/// both weight curves, the normalised scores, and the teacher's entropy. The
/// `uc_*` fields match what [`uc`] returns for the corresponding kind.
pub fn quantify(preds: &ExitPredictions) -> Result<UncertaintyRecord> {
    let m = preds.num_exits();
    let teacher_class = preds.teacher().argmax();

    let mut exit_argmax = Vec::with_capacity(m);
    let mut raw = 0.0;
    let mut uc_lin = 0.0;
    let mut uc_non = 0.0;
    for (i, student) in preds.students().iter().enumerate() {
        let l = i + 1;
        let class = student.argmax();
        exit_argmax.push(class);
        let disagrees = class != teacher_class;
        raw += kl_divergence(student, preds.teacher())?;
        let j = jsd(student, preds.teacher())?;
        uc_lin += weight_linear(l, m, disagrees)? * j;
        uc_non += weight_nonlinear(l, m, disagrees)? * j;
    }
    exit_argmax.push(teacher_class);

    Ok(UncertaintyRecord {
        exit_argmax,
        disagreement: raw,
        uc_linear: uc_lin,
        uc_nonlinear: uc_non,
        uc_norm_linear: uc_lin / uc_max(m, WeightKind::Linear)?,
        uc_norm_nonlinear: uc_non / uc_max(m, WeightKind::Nonlinear)?,
        teacher_entropy: entropy(preds.teacher()),
    })
}

/// On-disk batch format for scoring pre-computed exit distributions:
/// a JSON object `{"m": <exits>, "samples": [{"students": [[..], ..],
/// "teacher": [..]}, ..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleFile {
    /// Total number of exits, teacher included. Every sample must carry
    /// exactly `m - 1` student distributions.
    pub m: usize,
    pub samples: Vec<RawSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSample {
    pub students: Vec<Vec<f64>>,
    pub teacher: Vec<f64>,
}

impl SampleFile {
    /// Validate every sample and convert to [`ExitPredictions`].
    pub fn into_predictions(self) -> Result<Vec<ExitPredictions>> {
        if self.m < 2 {
            return Err(UncertaintyError::TooFewExits { m: self.m });
        }
        let mut out = Vec::with_capacity(self.samples.len());
        for (index, sample) in self.samples.into_iter().enumerate() {
            if sample.students.len() != self.m - 1 {
                return Err(UncertaintyError::WrongStudentCount {
                    index,
                    got: sample.students.len(),
                    expected: self.m - 1,
                    m: self.m,
                });
            }
            let students = sample
                .students
                .into_iter()
                .map(ProbVector::new)
                .collect::<Result<Vec<_>>>()?;
            let teacher = ProbVector::new(sample.teacher)?;
            out.push(ExitPredictions::new(students, teacher)?);
        }
        Ok(out)
    }
}
