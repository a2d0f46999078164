//! Multi-exit graph neural networks with self-distillation and
//! exit-disagreement uncertainty quantification.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] — dense `f64` tensors, a tape-based reverse-mode autodiff
//!   engine, graph message-passing kernels, Adam, and a finite-difference
//!   gradient checker.
//! * [`graphdata`] — graph/dataset containers, TU-format plain-text I/O, a
//!   synthetic hospital-admissions generator, batching, and split utilities
//!   (stratified k-fold, class hold-out, majority undersampling).
//! * [`gnn`] — GraphConv / GraphSAGE-mean layers, batch norm, dropout, mean
//!   pooling, and the multi-exit classifier with per-exit heads.
//! * [`distill`] — the self-distillation objective (per-exit cross-entropy +
//!   KL to the deepest exit + feature penalty) and the training loop.
//! * [`uncertainty`] — exit-disagreement metrics: KL/JSD disagreement,
//!   depth-dependent exit weights, the weighted uncertainty score `UC`, its
//!   upper bound `UC_max`, the normalized score, and predictive entropy.
//! * [`baselines`] — single-exit training, deep ensembles, and MC dropout.
//! * [`evaluation`] — F1 / ROC-AUC / calibration metrics, the cross-validated
//!   experiment driver, and the in- vs out-of-distribution entropy study.

pub mod baselines;
pub mod distill;
pub mod evaluation;
pub mod gnn;
pub mod graphdata;
pub mod numerics;
pub mod uncertainty;
