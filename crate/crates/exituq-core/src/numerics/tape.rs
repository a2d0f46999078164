//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every operation as a node holding its forward value and
//! the indices of its inputs; [`Tape::backward`] walks the nodes in reverse,
//! accumulating adjoints. Node indices are handed out in construction order,
//! so the list is already topologically sorted and a single reverse sweep
//! suffices.
//!
//! Loss functions that combine a softmax with a log-term (cross-entropy, KL
//! against a fixed target, the squared feature penalty) are fused into single
//! ops: their closed-form gradients are cheaper and far better conditioned
//! than composing `softmax → log → mul → sum` out of primitives.

use super::{EdgeList, NumericsError, Result, Tensor};
use std::rc::Rc;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Log-probability clamp shared by every KL/entropy-style computation.
pub(crate) const LOG_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, bias: Var },
    Relu(Var),
    SoftmaxRows(Var),
    MulMask { x: Var, mask: Tensor },
    SegmentMean { x: Var, segments: Rc<Vec<usize>>, n_segments: usize },
    NeighborSum { x: Var, edges: Rc<EdgeList> },
    NeighborMean { x: Var, edges: Rc<EdgeList> },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, mean: Tensor, inv_std: Tensor },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: Tensor, inv_std: Tensor },
    MeanAll(Var),
    SumAll(Var),
    CeWithLogits { logits: Var, labels: Rc<Vec<usize>> },
    KlToConst { logits: Var, target_log: Tensor },
    SqDiffToConst { x: Var, target: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics produced by a train-mode batch-norm op, for updating a
/// layer's running estimates. `var` is the biased (divide-by-n) variance used
/// for normalization; callers wanting the unbiased estimate rescale by
/// `n / (n - 1)`.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub n_rows: usize,
}

/// Recording tape for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input tensor (parameter or data) on the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_bias(self.value(bias))?;
        Ok(self.push(value, Op::AddBias { x, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        self.push(value, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).softmax_rows()?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// Elementwise product with a constant mask — the inverted-dropout
    /// primitive (mask entries are `0` or `1/(1-p)`).
    pub fn mul_mask(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul_mask",
                lhs: xv.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = xv.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulMask { x, mask }))
    }

    /// Mean-pools node rows into per-segment rows (graph readout).
    pub fn segment_mean(&mut self, x: Var, segments: Rc<Vec<usize>>, n_segments: usize) -> Result<Var> {
        let value = super::segment_mean(self.value(x), &segments, n_segments)?;
        Ok(self.push(value, Op::SegmentMean { x, segments, n_segments }))
    }

    /// Sums in-neighbor rows along the edge list.
    pub fn neighbor_sum(&mut self, x: Var, edges: Rc<EdgeList>) -> Result<Var> {
        let value = super::neighbor_sum(self.value(x), &edges)?;
        Ok(self.push(value, Op::NeighborSum { x, edges }))
    }

    /// Averages in-neighbor rows along the edge list; isolated nodes get zeros.
    pub fn neighbor_mean(&mut self, x: Var, edges: Rc<EdgeList>) -> Result<Var> {
        let value = super::neighbor_mean(self.value(x), &edges)?;
        Ok(self.push(value, Op::NeighborMean { x, edges }))
    }

    /// Train-mode batch norm: normalizes by the batch's own statistics and
    /// returns them so the caller can update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let (n, d) = self.bn_dims("batch_norm_train", x, gamma, beta)?;
        if n == 0 {
            return Err(NumericsError::InvalidArgument {
                op: "batch_norm_train",
                msg: "empty batch".into(),
            });
        }
        let mut mean = vec![0.0; d];
        for row in xv.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in xv.data().chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        for s in &mut var {
            *s /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let value = self.bn_normalize(x, gamma, beta, &mean, &inv_std)?;
        let stats = BatchStats {
            mean: Tensor::vector(mean.clone()),
            var: Tensor::vector(var),
            n_rows: n,
        };
        let op = Op::BatchNormTrain {
            x,
            gamma,
            beta,
            mean: Tensor::vector(mean),
            inv_std: Tensor::vector(inv_std),
        };
        Ok((self.push(value, op), stats))
    }

    /// Eval-mode batch norm: normalizes by fixed running statistics, which are
    /// treated as constants by the backward pass.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let (_, d) = self.bn_dims("batch_norm_eval", x, gamma, beta)?;
        if running_mean.numel() != d || running_var.numel() != d {
            return Err(NumericsError::ShapeMismatch {
                op: "batch_norm_eval",
                lhs: running_mean.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let inv_std: Vec<f64> = running_var.data().iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let value = self.bn_normalize(x, gamma, beta, running_mean.data(), &inv_std)?;
        let op = Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean: running_mean.clone(),
            inv_std: Tensor::vector(inv_std),
        };
        Ok(self.push(value, op))
    }

    fn bn_dims(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(NumericsError::InvalidArgument {
                op,
                msg: format!("input must be rank 2, got {:?}", xv.shape()),
            });
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        for param in [gamma, beta] {
            if self.value(param).shape() != [d] {
                return Err(NumericsError::ShapeMismatch {
                    op,
                    lhs: self.value(param).shape().to_vec(),
                    rhs: vec![d],
                });
            }
        }
        Ok((n, d))
    }

    fn bn_normalize(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> Result<Tensor> {
        let xv = self.value(x);
        let d = mean.len();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            for j in 0..d {
                data.push((row[j] - mean[j]) * inv_std[j] * g[j] + b[j]);
            }
        }
        Tensor::new(xv.shape().to_vec(), data)
    }

    /// Mean of all entries, producing a scalar node.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.data().iter().sum::<f64>() / v.numel() as f64);
        self.push(value, Op::MeanAll(x))
    }

    /// Sum of all entries, producing a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::SumAll(x))
    }

    /// Batch-mean cross-entropy between row logits and integer labels,
    /// computed directly from logits via log-sum-exp.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        let (n, k) = self.logits_dims("cross_entropy_with_logits", z, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NumericsError::IndexOutOfRange {
                op: "cross_entropy_with_logits",
                index: bad,
                len: k,
            });
        }
        let mut total = 0.0;
        for (row, &y) in z.data().chunks(k).zip(labels.iter()) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(value, Op::CeWithLogits { logits, labels }))
    }

    /// Batch-mean `KL(softmax(logits) ‖ target)` against a constant target
    /// distribution per row. `target` rows must already be valid probability
    /// vectors; they are clamped at `1e-12` inside the log.
    pub fn kl_to_const(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "kl_to_const",
                lhs: z.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (n, k) = self.logits_dims("kl_to_const", z, z.shape()[0])?;
        let target_log = target.map(|t| t.max(LOG_EPS).ln());
        let q = z.softmax_rows()?;
        let mut total = 0.0;
        for (q_row, t_row) in q.data().chunks(k).zip(target_log.data().chunks(k)) {
            for (qc, tc) in q_row.iter().zip(t_row) {
                total += qc * (qc.max(LOG_EPS).ln() - tc);
            }
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(value, Op::KlToConst { logits, target_log }))
    }

    /// Batch-mean squared distance to a constant target:
    /// `(1/n) Σ_i ‖x_i − t_i‖²` — the feature-alignment penalty.
    pub fn sq_diff_to_const(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "sq_diff_to_const",
                lhs: xv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = xv.shape().first().copied().unwrap_or(1).max(1);
        let total: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(value, Op::SqDiffToConst { x, target: target.clone() }))
    }

    fn logits_dims(&self, op: &'static str, z: &Tensor, expected_rows: usize) -> Result<(usize, usize)> {
        if z.shape().len() != 2 || z.shape()[0] != expected_rows || z.shape()[1] == 0 {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: z.shape().to_vec(),
                rhs: vec![expected_rows],
            });
        }
        Ok((z.shape()[0], z.shape()[1]))
    }

    /// Reverse sweep from a scalar `root`, returning adjoints for every node
    /// that influences it.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(NumericsError::NonScalarRoot { shape: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let ga = g.matmul_transpose_rhs(self.value(*b))?;
                    let gb = self.value(*a).matmul_transpose_lhs(&g)?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g.scale(-1.0))?;
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads[a.0], g.scale(*s))?;
                }
                Op::AddBias { x, bias } => {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads[x.0], g)?;
                    accumulate(&mut grads[bias.0], Tensor::vector(gb))?;
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), data)?)?;
                }
                Op::SoftmaxRows(x) => {
                    // g_z = q ⊙ (g − (g·q)·1) per row.
                    let q = &self.nodes[i].value;
                    let k = q.cols();
                    let mut data = Vec::with_capacity(q.numel());
                    for (g_row, q_row) in g.data().chunks(k).zip(q.data().chunks(k)) {
                        let dot: f64 = g_row.iter().zip(q_row).map(|(a, b)| a * b).sum();
                        data.extend(g_row.iter().zip(q_row).map(|(gv, qv)| qv * (gv - dot)));
                    }
                    accumulate(&mut grads[x.0], Tensor::new(q.shape().to_vec(), data)?)?;
                }
                Op::MulMask { x, mask } => {
                    let data = g.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect();
                    accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), data)?)?;
                }
                Op::SegmentMean { x, segments, n_segments } => {
                    let mut counts = vec![0.0_f64; *n_segments];
                    for &s in segments.iter() {
                        counts[s] += 1.0;
                    }
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    let gd = gx.data_mut();
                    for (row, &s) in segments.iter().enumerate() {
                        let src = &g.data()[s * d..(s + 1) * d];
                        let dst = &mut gd[row * d..(row + 1) * d];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += v / counts[s];
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::NeighborSum { x, edges } => {
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    let gd = gx.data_mut();
                    for &(src, dst) in edges.edges() {
                        let from = &g.data()[dst * d..(dst + 1) * d];
                        let to = &mut gd[src * d..(src + 1) * d];
                        for (o, v) in to.iter_mut().zip(from) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::NeighborMean { x, edges } => {
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let deg = edges.in_degree();
                    let mut gx = Tensor::zeros(xv.shape());
                    let gd = gx.data_mut();
                    for &(src, dst) in edges.edges() {
                        let from = &g.data()[dst * d..(dst + 1) * d];
                        let to = &mut gd[src * d..(src + 1) * d];
                        for (o, v) in to.iter_mut().zip(from) {
                            *o += v / deg[dst];
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::BatchNormTrain { x, gamma, beta, mean, inv_std } => {
                    let xv = self.value(*x);
                    let (n, d) = (xv.rows(), xv.cols());
                    let nf = n as f64;
                    let gv = self.value(*gamma).data();
                    // Recover x̂ and the per-feature reductions in one pass.
                    let mut sum_dxhat = vec![0.0; d];
                    let mut sum_dxhat_xhat = vec![0.0; d];
                    let mut sum_g = vec![0.0; d];
                    let mut sum_g_xhat = vec![0.0; d];
                    for (x_row, g_row) in xv.data().chunks(d).zip(g.data().chunks(d)) {
                        for j in 0..d {
                            let xhat = (x_row[j] - mean.data()[j]) * inv_std.data()[j];
                            let dxhat = g_row[j] * gv[j];
                            sum_dxhat[j] += dxhat;
                            sum_dxhat_xhat[j] += dxhat * xhat;
                            sum_g[j] += g_row[j];
                            sum_g_xhat[j] += g_row[j] * xhat;
                        }
                    }
                    let mut gx = Tensor::zeros(xv.shape());
                    {
                        let gd = gx.data_mut();
                        for (row, (x_row, g_row)) in
                            xv.data().chunks(d).zip(g.data().chunks(d)).enumerate()
                        {
                            for j in 0..d {
                                let xhat = (x_row[j] - mean.data()[j]) * inv_std.data()[j];
                                let dxhat = g_row[j] * gv[j];
                                gd[row * d + j] = inv_std.data()[j] / nf
                                    * (nf * dxhat - sum_dxhat[j] - xhat * sum_dxhat_xhat[j]);
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                    accumulate(&mut grads[gamma.0], Tensor::vector(sum_g_xhat))?;
                    accumulate(&mut grads[beta.0], Tensor::vector(sum_g))?;
                }
                Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                    // With fixed statistics the op is affine in x:
                    // dx = g ⊙ γ ⊙ inv_std, dγ = Σ g ⊙ x̂, dβ = Σ g.
                    let xv = self.value(*x);
                    let d = xv.cols();
                    let gv = self.value(*gamma).data();
                    let mut gx = Tensor::zeros(xv.shape());
                    let mut sum_g = vec![0.0; d];
                    let mut sum_g_xhat = vec![0.0; d];
                    {
                        let gd = gx.data_mut();
                        for (row, (x_row, g_row)) in
                            xv.data().chunks(d).zip(g.data().chunks(d)).enumerate()
                        {
                            for j in 0..d {
                                let xhat = (x_row[j] - mean.data()[j]) * inv_std.data()[j];
                                sum_g[j] += g_row[j];
                                sum_g_xhat[j] += g_row[j] * xhat;
                                gd[row * d + j] = g_row[j] * gv[j] * inv_std.data()[j];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx)?;
                    accumulate(&mut grads[gamma.0], Tensor::vector(sum_g_xhat))?;
                    accumulate(&mut grads[beta.0], Tensor::vector(sum_g))?;
                }
                Op::MeanAll(x) => {
                    let xv = self.value(*x);
                    let gscale = g.scalar_value() / xv.numel() as f64;
                    accumulate(&mut grads[x.0], Tensor::full(xv.shape(), gscale))?;
                }
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads[x.0], Tensor::full(xv.shape(), g.scalar_value()))?;
                }
                Op::CeWithLogits { logits, labels } => {
                    // dL/dz = (softmax(z) − onehot(y)) / n, scaled by the
                    // incoming scalar adjoint.
                    let z = self.value(*logits);
                    let k = z.cols();
                    let n = z.rows() as f64;
                    let scale = g.scalar_value() / n;
                    let q = z.softmax_rows()?;
                    let mut gz = q.scale(scale);
                    {
                        let gd = gz.data_mut();
                        for (row, &y) in labels.iter().enumerate() {
                            gd[row * k + y] -= scale;
                        }
                    }
                    accumulate(&mut grads[logits.0], gz)?;
                }
                Op::KlToConst { logits, target_log } => {
                    // With a = ln q − ln t and S = Σ_c q_c a_c per row:
                    // dL/dz_j = q_j (a_j − S) / n.
                    let z = self.value(*logits);
                    let k = z.cols();
                    let n = z.rows() as f64;
                    let scale = g.scalar_value() / n;
                    let q = z.softmax_rows()?;
                    let mut data = Vec::with_capacity(q.numel());
                    for (q_row, t_row) in q.data().chunks(k).zip(target_log.data().chunks(k)) {
                        let a: Vec<f64> = q_row
                            .iter()
                            .zip(t_row)
                            .map(|(qc, tc)| qc.max(LOG_EPS).ln() - tc)
                            .collect();
                        let s: f64 = q_row.iter().zip(&a).map(|(qc, ac)| qc * ac).sum();
                        data.extend(q_row.iter().zip(&a).map(|(qc, ac)| scale * qc * (ac - s)));
                    }
                    accumulate(&mut grads[logits.0], Tensor::new(z.shape().to_vec(), data)?)?;
                }
                Op::SqDiffToConst { x, target } => {
                    let xv = self.value(*x);
                    let n = xv.shape().first().copied().unwrap_or(1).max(1) as f64;
                    let scale = 2.0 * g.scalar_value() / n;
                    let data = xv
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), data)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&delta),
        None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let s = tape.sum_all(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_norm_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let target = Tensor::zeros(&[1, 2]);
        let loss = tape.sq_diff_to_const(x, &target).unwrap();
        assert_eq!(tape.value(loss).scalar_value(), 5.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(NumericsError::NonScalarRoot { .. })));
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let unused = tape.leaf(Tensor::scalar(5.0));
        let y = tape.scale(x, 3.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 3.0);
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn fan_out_accumulates_adjoints() {
        // y = x + x ⇒ dy/dx = 2.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(4.0));
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().scalar_value(), 2.0);
    }

    #[test]
    fn cross_entropy_matches_log_softmax_by_hand() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap());
        let labels = Rc::new(vec![0usize]);
        let loss = tape.cross_entropy_with_logits(z, labels).unwrap();
        let expected = -(2.0_f64.exp() / (2.0_f64.exp() + 1.0)).ln();
        assert!((tape.value(loss).scalar_value() - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_to_itself_is_zero_with_zero_gradient_direction() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_rows(&[vec![0.4, -1.3, 2.0]]).unwrap());
        let target = tape.value(z).softmax_rows().unwrap();
        let loss = tape.kl_to_const(z, &target).unwrap();
        assert!(tape.value(loss).scalar_value().abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        for v in grads.get(z).unwrap().data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[1, 3]));
        assert!(tape.cross_entropy_with_logits(z, Rc::new(vec![3])).is_err());
    }
}
