//! Finite-difference verification of every tape operation.
//!
//! Each case rebuilds the graph from a perturbed copy of one input, reduces
//! the output to a scalar through a fixed random linear functional, and
//! compares the tape's analytic gradient against central differences
//! (step 1e-5, relative tolerance 1e-4).

use exituq_core::numerics::{check_gradient, EdgeList, Tape, Tensor, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::rc::Rc;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random tensor with entries kept away from zero, for kinked ops like relu.
fn random_tensor_off_kink(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    random_tensor(rng, shape).map(|v| if v.abs() < 0.05 { v.signum() * 0.1 + v } else { v })
}

/// Reduces `out` to a scalar via `sum(out ⊙ probe)` so every output entry
/// participates with a distinct weight.
fn reduce(tape: &mut Tape, out: Var, probe: &Tensor) -> Var {
    let masked = tape.mul_mask(out, probe.clone()).unwrap();
    tape.sum_all(masked)
}

/// Checks d(scalar)/d(input_idx) for a graph builder over fixed inputs.
///
/// `build` receives the tape and the inputs (with `inputs[input_idx]`
/// replaced by the probe point) and returns the scalar root.
fn check_input_gradient(
    name: &str,
    inputs: &[Tensor],
    input_idx: usize,
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) {
    let run = |probe: &Tensor| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(if i == input_idx { probe.clone() } else { t.clone() }))
            .collect();
        let root = build(&mut tape, &vars);
        let value = tape.value(root).scalar_value();
        let grad = tape.backward(root).unwrap().get(vars[input_idx]).cloned();
        (value, grad)
    };
    let x = &inputs[input_idx];
    let (_, analytic) = run(x);
    let analytic = analytic.unwrap_or_else(|| panic!("{name}: no gradient for input {input_idx}"));
    let mut f = |probe: &Tensor| run(probe).0;
    let report = check_gradient(&mut f, x, &analytic, H);
    assert!(
        report.passes(TOL),
        "{name} input {input_idx}: max rel err {:.3e} at flat index {} (analytic {}, numerical {})",
        report.max_rel_error,
        report.worst_index,
        report.analytic,
        report.numerical
    );
}

#[test]
fn matmul_gradients() {
    let mut rng = StdRng::seed_from_u64(11);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    let probe = random_tensor(&mut rng, &[3, 2]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let c = tape.matmul(vars[0], vars[1]).unwrap();
        reduce(tape, c, &probe)
    };
    check_input_gradient("matmul", &[a.clone(), b.clone()], 0, &build);
    check_input_gradient("matmul", &[a, b], 1, &build);
}

#[test]
fn add_sub_scale_gradients() {
    let mut rng = StdRng::seed_from_u64(12);
    let a = random_tensor(&mut rng, &[2, 3]);
    let b = random_tensor(&mut rng, &[2, 3]);
    let probe = random_tensor(&mut rng, &[2, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let sum = tape.add(vars[0], vars[1]).unwrap();
        let diff = tape.sub(sum, vars[1]).unwrap();
        let scaled = tape.scale(diff, -0.7);
        let back = tape.add(scaled, vars[1]).unwrap();
        reduce(tape, back, &probe)
    };
    check_input_gradient("add/sub/scale", &[a.clone(), b.clone()], 0, &build);
    check_input_gradient("add/sub/scale", &[a, b], 1, &build);
}

#[test]
fn add_bias_gradients() {
    let mut rng = StdRng::seed_from_u64(13);
    let x = random_tensor(&mut rng, &[4, 3]);
    let bias = random_tensor(&mut rng, &[3]);
    let probe = random_tensor(&mut rng, &[4, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.add_bias(vars[0], vars[1]).unwrap();
        reduce(tape, y, &probe)
    };
    check_input_gradient("add_bias", &[x.clone(), bias.clone()], 0, &build);
    check_input_gradient("add_bias", &[x, bias], 1, &build);
}

#[test]
fn relu_gradient() {
    let mut rng = StdRng::seed_from_u64(14);
    let x = random_tensor_off_kink(&mut rng, &[3, 5]);
    let probe = random_tensor(&mut rng, &[3, 5]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.relu(vars[0]);
        reduce(tape, y, &probe)
    };
    check_input_gradient("relu", &[x], 0, &build);
}

#[test]
fn softmax_rows_gradient() {
    let mut rng = StdRng::seed_from_u64(15);
    let x = random_tensor(&mut rng, &[3, 4]);
    let probe = random_tensor(&mut rng, &[3, 4]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.softmax_rows(vars[0]).unwrap();
        reduce(tape, y, &probe)
    };
    check_input_gradient("softmax_rows", &[x], 0, &build);
}

#[test]
fn dropout_mask_gradient_is_the_mask() {
    let mut rng = StdRng::seed_from_u64(16);
    let x = random_tensor(&mut rng, &[4, 4]);
    // Inverted-dropout mask at p = 0.5: entries are 0 or 2.
    let mask = random_tensor(&mut rng, &[4, 4]).map(|v| if v > 0.0 { 2.0 } else { 0.0 });
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.mul_mask(xv, mask.clone()).unwrap();
    let s = tape.sum_all(y);
    let grads = tape.backward(s).unwrap();
    assert!(grads.get(xv).unwrap().max_abs_diff(&mask) < 1e-15);
}

#[test]
fn segment_mean_gradient() {
    let mut rng = StdRng::seed_from_u64(17);
    let x = random_tensor(&mut rng, &[5, 3]);
    let segments = Rc::new(vec![0usize, 0, 1, 2, 2]);
    let probe = random_tensor(&mut rng, &[3, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.segment_mean(vars[0], segments.clone(), 3).unwrap();
        reduce(tape, y, &probe)
    };
    check_input_gradient("segment_mean", &[x], 0, &build);
}

fn ring_edges(n: usize) -> EdgeList {
    let mut edges = Vec::new();
    for v in 0..n {
        edges.push((v, (v + 1) % n));
        edges.push(((v + 1) % n, v));
    }
    // One double edge and one isolated-ish extra hop to vary the degrees.
    edges.push((0, 2));
    EdgeList::new(edges, n).unwrap()
}

#[test]
fn neighbor_sum_gradient() {
    let mut rng = StdRng::seed_from_u64(18);
    let x = random_tensor(&mut rng, &[6, 3]);
    let edges = Rc::new(ring_edges(6));
    let probe = random_tensor(&mut rng, &[6, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.neighbor_sum(vars[0], edges.clone()).unwrap();
        reduce(tape, y, &probe)
    };
    check_input_gradient("neighbor_sum", &[x], 0, &build);
}

#[test]
fn neighbor_mean_gradient() {
    let mut rng = StdRng::seed_from_u64(19);
    let x = random_tensor(&mut rng, &[6, 3]);
    let edges = Rc::new(ring_edges(6));
    let probe = random_tensor(&mut rng, &[6, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape.neighbor_mean(vars[0], edges.clone()).unwrap();
        reduce(tape, y, &probe)
    };
    check_input_gradient("neighbor_mean", &[x], 0, &build);
}

#[test]
fn batch_norm_train_gradients() {
    let mut rng = StdRng::seed_from_u64(20);
    let x = random_tensor(&mut rng, &[6, 4]);
    let gamma = random_tensor(&mut rng, &[4]).map(|v| v + 2.0);
    let beta = random_tensor(&mut rng, &[4]);
    let probe = random_tensor(&mut rng, &[6, 4]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let (y, _stats) = tape.batch_norm_train(vars[0], vars[1], vars[2], 1e-5).unwrap();
        reduce(tape, y, &probe)
    };
    let inputs = [x, gamma, beta];
    for idx in 0..3 {
        check_input_gradient("batch_norm_train", &inputs, idx, &build);
    }
}

#[test]
fn batch_norm_eval_gradients() {
    let mut rng = StdRng::seed_from_u64(21);
    let x = random_tensor(&mut rng, &[5, 3]);
    let gamma = random_tensor(&mut rng, &[3]);
    let beta = random_tensor(&mut rng, &[3]);
    let running_mean = random_tensor(&mut rng, &[3]);
    let running_var = random_tensor(&mut rng, &[3]).map(|v| v.abs() + 0.5);
    let probe = random_tensor(&mut rng, &[5, 3]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let y = tape
            .batch_norm_eval(vars[0], vars[1], vars[2], &running_mean, &running_var, 1e-5)
            .unwrap();
        reduce(tape, y, &probe)
    };
    let inputs = [x, gamma, beta];
    for idx in 0..3 {
        check_input_gradient("batch_norm_eval", &inputs, idx, &build);
    }
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = StdRng::seed_from_u64(22);
    let z = random_tensor(&mut rng, &[5, 4]);
    let labels = Rc::new(vec![0usize, 3, 1, 2, 2]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        tape.cross_entropy_with_logits(vars[0], labels.clone()).unwrap()
    };
    check_input_gradient("cross_entropy_with_logits", &[z], 0, &build);
}

#[test]
fn kl_to_const_gradient() {
    let mut rng = StdRng::seed_from_u64(23);
    let z = random_tensor(&mut rng, &[4, 3]);
    let target = random_tensor(&mut rng, &[4, 3]).softmax_rows().unwrap();
    let build = move |tape: &mut Tape, vars: &[Var]| tape.kl_to_const(vars[0], &target).unwrap();
    check_input_gradient("kl_to_const", &[z], 0, &build);
}

#[test]
fn sq_diff_gradient() {
    let mut rng = StdRng::seed_from_u64(24);
    let x = random_tensor(&mut rng, &[4, 6]);
    let target = random_tensor(&mut rng, &[4, 6]);
    let build = move |tape: &mut Tape, vars: &[Var]| tape.sq_diff_to_const(vars[0], &target).unwrap();
    check_input_gradient("sq_diff_to_const", &[x], 0, &build);
}

#[test]
fn mean_all_gradient() {
    let mut rng = StdRng::seed_from_u64(25);
    let x = random_tensor(&mut rng, &[3, 3]);
    let build = |tape: &mut Tape, vars: &[Var]| tape.mean_all(vars[0]);
    check_input_gradient("mean_all", &[x], 0, &build);
}

/// End-to-end chain exercising op interactions: message passing → affine →
/// batch norm → relu → pooling → linear head → cross-entropy.
#[test]
fn gnn_style_chain_gradients() {
    let mut rng = StdRng::seed_from_u64(26);
    let n_nodes = 7;
    let x = random_tensor(&mut rng, &[n_nodes, 3]);
    let w_self = random_tensor(&mut rng, &[3, 4]);
    let w_neigh = random_tensor(&mut rng, &[3, 4]);
    let bias = random_tensor(&mut rng, &[4]);
    let gamma = random_tensor(&mut rng, &[4]).map(|v| v + 2.0);
    let beta = random_tensor(&mut rng, &[4]);
    let w_head = random_tensor(&mut rng, &[4, 2]);
    let edges = Rc::new(ring_edges(n_nodes));
    let segments = Rc::new(vec![0usize, 0, 0, 1, 1, 1, 1]);
    let labels = Rc::new(vec![0usize, 1]);
    let build = move |tape: &mut Tape, vars: &[Var]| {
        let agg = tape.neighbor_mean(vars[0], edges.clone()).unwrap();
        let self_part = tape.matmul(vars[0], vars[1]).unwrap();
        let neigh_part = tape.matmul(agg, vars[2]).unwrap();
        let combined = tape.add(self_part, neigh_part).unwrap();
        let with_bias = tape.add_bias(combined, vars[3]).unwrap();
        let (normed, _) = tape.batch_norm_train(with_bias, vars[4], vars[5], 1e-5).unwrap();
        let act = tape.relu(normed);
        let pooled = tape.segment_mean(act, segments.clone(), 2).unwrap();
        let logits = tape.matmul(pooled, vars[6]).unwrap();
        tape.cross_entropy_with_logits(logits, labels.clone()).unwrap()
    };
    let inputs = [x, w_self, w_neigh, bias, gamma, beta, w_head];
    for idx in 0..inputs.len() {
        check_input_gradient("gnn_chain", &inputs, idx, &build);
    }
}
