//! Multi-exit graph neural network.
//!
//! The backbone is a stack of message-passing blocks
//! (`conv → batch norm → relu`); a classification head (exit) hangs
//! off each block for the multi-exit model, or off the last block only for
//! the single-exit baseline. Every exit mean-pools its block's node features
//! per graph, applies dropout to the pooled feature, and maps it through a
//! two-layer MLP to class logits. When a
//! student block's width differs from the deepest block's, a linear
//! harmonizer projects its pooled features to the teacher width so the
//! feature-alignment penalty compares like with like.
//!
//! Two layer flavors are provided: `GraphConv`
//! (`W_self·x_v + W_neigh·Σ_{u→v} x_u + b`, after Morris et al.) and the
//! mean-aggregator GraphSAGE variant (Hamilton et al.), which replaces the
//! neighbor sum with a mean.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};

use crate::graphdata::Batch;
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use rand::rngs::StdRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

/// Errors raised while building or running models.
#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, GnnError>;

/// Message-passing flavor of the backbone blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Sum aggregation with separate self/neighbor weights.
    #[serde(rename = "graphconv")]
    GraphConv,
    /// Mean aggregation with separate self/neighbor weights.
    #[serde(rename = "sage-mean")]
    SageMean,
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "graphconv" => Ok(Self::GraphConv),
            "sage-mean" => Ok(Self::SageMean),
            other => Err(format!("unknown layer kind {other:?} (expected graphconv or sage-mean)")),
        }
    }
}

/// Architecture hyperparameters shared by every model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub layer_kind: LayerKind,
    pub input_dim: usize,
    /// Output width of each backbone block; the length is the model depth.
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    /// Hidden width of every exit head's MLP.
    pub head_hidden: usize,
    /// Dropout probability on each exit head's input feature — the layer
    /// before the fully connected classifier (0 disables).
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ArchConfig {
    /// Standard configuration: four 64-wide blocks, 32-wide heads, p = 0.5
    /// dropout, PyTorch batch-norm constants.
    pub fn standard(layer_kind: LayerKind, input_dim: usize, num_classes: usize) -> Self {
        Self {
            layer_kind,
            input_dim,
            hidden_dims: vec![64; 4],
            num_classes,
            head_hidden: 32,
            dropout: 0.5,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.head_hidden == 0 {
            return Err(GnnError::Config("dimensions must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(GnnError::Config(format!(
                "hidden_dims must be non-empty and positive, got {:?}",
                self.hidden_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GnnError::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(GnnError::Config("bad batch-norm constants".into()));
        }
        Ok(())
    }
}

/// Fully connected layer: `x · weight + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn new(rng: &mut StdRng, d_in: usize, d_out: usize) -> Self {
        Self { weight: glorot(rng, d_in, d_out), bias: Tensor::zeros(&[d_out]) }
    }

    fn n_params(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// One message-passing block's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub w_self: Tensor,
    pub w_neigh: Tensor,
    pub bias: Tensor,
}

impl GnnLayer {
    fn new(rng: &mut StdRng, d_in: usize, d_out: usize) -> Self {
        Self {
            w_self: glorot(rng, d_in, d_out),
            w_neigh: glorot(rng, d_in, d_out),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    fn n_params(&self) -> usize {
        self.w_self.numel() + self.w_neigh.numel() + self.bias.numel()
    }
}

/// Batch-norm parameters plus running statistics (running stats are state,
/// not trainable parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::full(&[dim], 1.0),
        }
    }

    fn n_params(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

/// A classification exit attached to one backbone block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitHead {
    /// Index of the backbone block this exit reads from.
    pub layer_index: usize,
    /// Projects pooled features to the teacher width when widths differ.
    pub harmonizer: Option<Linear>,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ExitHead {
    fn n_params(&self) -> usize {
        self.harmonizer.as_ref().map_or(0, Linear::n_params) + self.fc1.n_params() + self.fc2.n_params()
    }
}

/// How a forward pass treats batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Batch statistics, running-stat updates, dropout active.
    Train,
    /// Running statistics, dropout off — deterministic.
    Eval,
    /// Running statistics with dropout active: one stochastic MC sample.
    McSample,
}

/// Tape handles produced by one forward pass, ordered shallow → deep.
pub struct ForwardOutput {
    /// Per-exit class logits `[n_graphs × num_classes]`.
    pub logits: Vec<Var>,
    /// Per-exit pooled (and harmonized) graph features, all teacher-width.
    pub features: Vec<Var>,
    /// Detached per-exit softmax probabilities.
    pub probabilities: Vec<Tensor>,
}

impl ForwardOutput {
    pub fn n_exits(&self) -> usize {
        self.logits.len()
    }

    /// Index of the deepest (teacher) exit.
    pub fn teacher(&self) -> usize {
        self.logits.len() - 1
    }
}

/// Multi-exit GNN classifier. The single-exit baseline is the same type with
/// one exit on the last block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExitGnn {
    pub arch: ArchConfig,
    pub layers: Vec<GnnLayer>,
    pub norms: Vec<BatchNorm>,
    pub exits: Vec<ExitHead>,
}

impl MultiExitGnn {
    /// Builds a model with one exit per backbone block.
    pub fn new_multi_exit(arch: ArchConfig, rng: &mut StdRng) -> Result<Self> {
        let exit_layers: Vec<usize> = (0..arch.hidden_dims.len()).collect();
        Self::with_exits(arch, &exit_layers, rng)
    }

    /// Builds the single-exit baseline (one head on the deepest block).
    pub fn new_single_exit(arch: ArchConfig, rng: &mut StdRng) -> Result<Self> {
        let last = arch.hidden_dims.len() - 1;
        Self::with_exits(arch, &[last], rng)
    }

    fn with_exits(arch: ArchConfig, exit_layers: &[usize], rng: &mut StdRng) -> Result<Self> {
        arch.validate()?;
        let depth = arch.hidden_dims.len();
        let teacher_dim = *arch.hidden_dims.last().expect("validated non-empty");
        let mut layers = Vec::with_capacity(depth);
        let mut norms = Vec::with_capacity(depth);
        let mut d_in = arch.input_dim;
        for &d_out in &arch.hidden_dims {
            layers.push(GnnLayer::new(rng, d_in, d_out));
            norms.push(BatchNorm::new(d_out));
            d_in = d_out;
        }
        let mut exits = Vec::with_capacity(exit_layers.len());
        for &layer_index in exit_layers {
            if layer_index >= depth {
                return Err(GnnError::Config(format!("exit at layer {layer_index} of {depth}")));
            }
            let d_block = arch.hidden_dims[layer_index];
            let harmonizer =
                (d_block != teacher_dim).then(|| Linear::new(rng, d_block, teacher_dim));
            exits.push(ExitHead {
                layer_index,
                harmonizer,
                fc1: Linear::new(rng, teacher_dim, arch.head_hidden),
                fc2: Linear::new(rng, arch.head_hidden, arch.num_classes),
            });
        }
        Ok(Self { arch, layers, norms, exits })
    }

    pub fn n_exits(&self) -> usize {
        self.exits.len()
    }

    /// Total trainable parameter count (running statistics excluded).
    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(GnnLayer::n_params).sum::<usize>()
            + self.norms.iter().map(BatchNorm::n_params).sum::<usize>()
            + self.exits.iter().map(ExitHead::n_params).sum::<usize>()
    }

    /// Visits every trainable tensor in a fixed order (layers, then norms,
    /// then exits). The optimizer keys its state by this order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for layer in &mut self.layers {
            f(&mut layer.w_self);
            f(&mut layer.w_neigh);
            f(&mut layer.bias);
        }
        for norm in &mut self.norms {
            f(&mut norm.gamma);
            f(&mut norm.beta);
        }
        for exit in &mut self.exits {
            if let Some(h) = &mut exit.harmonizer {
                f(&mut h.weight);
                f(&mut h.bias);
            }
            f(&mut exit.fc1.weight);
            f(&mut exit.fc1.bias);
            f(&mut exit.fc2.weight);
            f(&mut exit.fc2.bias);
        }
    }

    /// Forward pass. Returns the tape, the per-exit outputs, and the leaf
    /// [`Var`]s of every trainable parameter in `visit_params_mut` order so a
    /// training loop can collect gradients positionally.
    ///
    /// `rng` drives dropout masks and is required for [`ForwardMode::Train`]
    /// and [`ForwardMode::McSample`] whenever `arch.dropout > 0`.
    pub fn forward(
        &mut self,
        batch: &Batch,
        mode: ForwardMode,
        mut rng: Option<&mut StdRng>,
    ) -> Result<(Tape, ForwardOutput, Vec<Var>)> {
        if batch.features.cols() != self.arch.input_dim {
            return Err(GnnError::Config(format!(
                "batch feature width {} != input_dim {}",
                batch.features.cols(),
                self.arch.input_dim
            )));
        }
        let dropout_active = mode != ForwardMode::Eval && self.arch.dropout > 0.0;
        if dropout_active && rng.is_none() {
            return Err(GnnError::Config("dropout requires an rng in train/mc modes".into()));
        }
        let mut tape = Tape::new();

        // Register every parameter as a leaf, in visitor order.
        let mut param_vars = Vec::new();
        let depth = self.layers.len();
        let mut layer_vars = Vec::with_capacity(depth);
        for layer in &self.layers {
            let w_self = tape.leaf(layer.w_self.clone());
            let w_neigh = tape.leaf(layer.w_neigh.clone());
            let bias = tape.leaf(layer.bias.clone());
            param_vars.extend([w_self, w_neigh, bias]);
            layer_vars.push((w_self, w_neigh, bias));
        }
        let mut norm_vars = Vec::with_capacity(depth);
        for norm in &self.norms {
            let gamma = tape.leaf(norm.gamma.clone());
            let beta = tape.leaf(norm.beta.clone());
            param_vars.extend([gamma, beta]);
            norm_vars.push((gamma, beta));
        }
        struct HeadVars {
            harmonizer: Option<(Var, Var)>,
            fc1: (Var, Var),
            fc2: (Var, Var),
        }
        let mut head_vars = Vec::with_capacity(self.exits.len());
        for exit in &self.exits {
            let harmonizer = exit.harmonizer.as_ref().map(|h| {
                let w = tape.leaf(h.weight.clone());
                let b = tape.leaf(h.bias.clone());
                param_vars.extend([w, b]);
                (w, b)
            });
            let fc1 = (tape.leaf(exit.fc1.weight.clone()), tape.leaf(exit.fc1.bias.clone()));
            param_vars.extend([fc1.0, fc1.1]);
            let fc2 = (tape.leaf(exit.fc2.weight.clone()), tape.leaf(exit.fc2.bias.clone()));
            param_vars.extend([fc2.0, fc2.1]);
            head_vars.push(HeadVars { harmonizer, fc1, fc2 });
        }

        // Backbone sweep, capturing each block's output.
        let mut x = tape.leaf(batch.features.clone());
        let mut block_outputs = Vec::with_capacity(depth);
        for li in 0..depth {
            let (w_self, w_neigh, bias) = layer_vars[li];
            let agg = match self.arch.layer_kind {
                LayerKind::GraphConv => tape.neighbor_sum(x, batch.edges.clone())?,
                LayerKind::SageMean => tape.neighbor_mean(x, batch.edges.clone())?,
            };
            let self_part = tape.matmul(x, w_self)?;
            let neigh_part = tape.matmul(agg, w_neigh)?;
            let combined = tape.add(self_part, neigh_part)?;
            let pre_norm = tape.add_bias(combined, bias)?;
            let (gamma, beta) = norm_vars[li];
            let normed = match mode {
                ForwardMode::Train => {
                    let (y, stats) =
                        tape.batch_norm_train(pre_norm, gamma, beta, self.arch.bn_eps)?;
                    self.update_running_stats(li, &stats);
                    y
                }
                ForwardMode::Eval | ForwardMode::McSample => tape.batch_norm_eval(
                    pre_norm,
                    gamma,
                    beta,
                    &self.norms[li].running_mean,
                    &self.norms[li].running_var,
                    self.arch.bn_eps,
                )?,
            };
            let activated = tape.relu(normed);
            block_outputs.push(activated);
            x = activated;
        }

        // Exits: pool, harmonize, classify.
        let segments = Rc::new(batch.graph_ids.as_ref().clone());
        let n_graphs = batch.n_graphs();
        let mut logits = Vec::with_capacity(self.exits.len());
        let mut features = Vec::with_capacity(self.exits.len());
        let mut probabilities = Vec::with_capacity(self.exits.len());
        for (exit, vars) in self.exits.iter().zip(&head_vars) {
            let pooled = tape.segment_mean(block_outputs[exit.layer_index], segments.clone(), n_graphs)?;
            let feat = match vars.harmonizer {
                Some((w, b)) => {
                    let xw = tape.matmul(pooled, w)?;
                    tape.add_bias(xw, b)?
                }
                None => pooled,
            };
            // Dropout sits on the head's input feature (before the fully
            // connected classifier), so MC sampling perturbs each exit's
            // decision while the shared backbone stays deterministic.
            let head_in = if dropout_active {
                let rng = rng.as_deref_mut().expect("checked above");
                let mask = dropout_mask(rng, tape.value(feat).shape(), self.arch.dropout);
                tape.mul_mask(feat, mask)?
            } else {
                feat
            };
            let h1 = tape.matmul(head_in, vars.fc1.0)?;
            let h1 = tape.add_bias(h1, vars.fc1.1)?;
            let h1 = tape.relu(h1);
            let z = tape.matmul(h1, vars.fc2.0)?;
            let z = tape.add_bias(z, vars.fc2.1)?;
            probabilities.push(tape.value(z).softmax_rows()?);
            logits.push(z);
            features.push(feat);
        }
        Ok((tape, ForwardOutput { logits, features, probabilities }, param_vars))
    }

    /// PyTorch-convention running-stat update: `running ← (1 − momentum) ·
    /// running + momentum · batch`, with the unbiased batch variance when the
    /// batch has more than one row.
    fn update_running_stats(&mut self, layer: usize, stats: &crate::numerics::BatchStats) {
        let momentum = self.arch.bn_momentum;
        let norm = &mut self.norms[layer];
        let n = stats.n_rows as f64;
        let correction = if stats.n_rows > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, b) in norm.running_mean.data_mut().iter_mut().zip(stats.mean.data()) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in norm.running_var.data_mut().iter_mut().zip(stats.var.data()) {
            *r = (1.0 - momentum) * *r + momentum * b * correction;
        }
    }
}

/// Glorot/Xavier uniform initialization.
fn glorot(rng: &mut StdRng, d_in: usize, d_out: usize) -> Tensor {
    let limit = (6.0 / (d_in + d_out) as f64).sqrt();
    let data = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(vec![d_in, d_out], data).expect("finite init")
}

/// Inverted-dropout mask: entries are `0` with probability `p`, else
/// `1/(1-p)`, so eval-mode activations need no rescaling.
fn dropout_mask(rng: &mut StdRng, shape: &[usize], p: f64) -> Tensor {
    let keep_scale = 1.0 / (1.0 - p);
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite mask")
}
