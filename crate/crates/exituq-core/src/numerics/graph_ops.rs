//! Sparse message-passing and pooling kernels over edge lists.
//!
//! Edges are directed pairs `(src, dst)`; aggregation at a node collects its
//! in-neighbors, i.e. every `src` with an edge into it. Undirected graph
//! formats that store both orientations therefore aggregate the full
//! neighborhood.

use super::{NumericsError, Result, Tensor};

/// A directed edge list over `n_nodes` nodes with precomputed in-degrees.
///
/// Built once per batch and shared by every layer that touches it.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    edges: Vec<(usize, usize)>,
    n_nodes: usize,
    in_degree: Vec<f64>,
}

impl EdgeList {
    /// Validates that all endpoints are in range and tallies in-degrees.
    pub fn new(edges: Vec<(usize, usize)>, n_nodes: usize) -> Result<Self> {
        let mut in_degree = vec![0.0; n_nodes];
        for &(src, dst) in &edges {
            let bad = if src >= n_nodes { Some(src) } else if dst >= n_nodes { Some(dst) } else { None };
            if let Some(index) = bad {
                return Err(NumericsError::IndexOutOfRange { op: "EdgeList::new", index, len: n_nodes });
            }
            in_degree[dst] += 1.0;
        }
        Ok(Self { edges, n_nodes, in_degree })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn in_degree(&self) -> &[f64] {
        &self.in_degree
    }
}

fn check_node_rows(op: &'static str, x: &Tensor, n_nodes: usize) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[0] != n_nodes {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![n_nodes],
        });
    }
    Ok(x.shape()[1])
}

/// Sum of in-neighbor feature rows: `out[v] = Σ_{(u,v) ∈ E} x[u]`.
///
/// Nodes with no in-edges get a zero row.
pub fn neighbor_sum(x: &Tensor, edges: &EdgeList) -> Result<Tensor> {
    let d = check_node_rows("neighbor_sum", x, edges.n_nodes())?;
    let mut out = Tensor::zeros(x.shape());
    let data = out.data_mut();
    for &(src, dst) in edges.edges() {
        let row = x.row(src).to_vec();
        let target = &mut data[dst * d..(dst + 1) * d];
        for (t, v) in target.iter_mut().zip(&row) {
            *t += v;
        }
    }
    Ok(out)
}

/// Mean of in-neighbor feature rows; nodes with no in-edges get a zero row
/// rather than a division by zero.
pub fn neighbor_mean(x: &Tensor, edges: &EdgeList) -> Result<Tensor> {
    let d = check_node_rows("neighbor_mean", x, edges.n_nodes())?;
    let mut out = neighbor_sum(x, edges)?;
    let deg = edges.in_degree();
    let data = out.data_mut();
    for (v, row) in data.chunks_mut(d).enumerate() {
        if deg[v] > 0.0 {
            for value in row {
                *value /= deg[v];
            }
        }
    }
    Ok(out)
}

fn check_segments(op: &'static str, x: &Tensor, segment_ids: &[usize], n_segments: usize) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[0] != segment_ids.len() {
        return Err(NumericsError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![segment_ids.len()],
        });
    }
    if let Some(&index) = segment_ids.iter().find(|&&s| s >= n_segments) {
        return Err(NumericsError::IndexOutOfRange { op, index, len: n_segments });
    }
    Ok(x.shape()[1])
}

/// Sums rows of `x` into `n_segments` buckets selected by `segment_ids`.
pub fn segment_sum(x: &Tensor, segment_ids: &[usize], n_segments: usize) -> Result<Tensor> {
    let d = check_segments("segment_sum", x, segment_ids, n_segments)?;
    let mut out = Tensor::zeros(&[n_segments, d]);
    let data = out.data_mut();
    for (row, &seg) in segment_ids.iter().enumerate() {
        let src = x.row(row).to_vec();
        let target = &mut data[seg * d..(seg + 1) * d];
        for (t, v) in target.iter_mut().zip(&src) {
            *t += v;
        }
    }
    Ok(out)
}

/// Averages rows of `x` per segment. Every segment must receive at least one
/// row — an empty segment means a graph lost all of its nodes upstream, which
/// is always a bug worth surfacing.
pub fn segment_mean(x: &Tensor, segment_ids: &[usize], n_segments: usize) -> Result<Tensor> {
    let d = check_segments("segment_mean", x, segment_ids, n_segments)?;
    let mut counts = vec![0.0_f64; n_segments];
    for &seg in segment_ids {
        counts[seg] += 1.0;
    }
    if let Some(segment) = counts.iter().position(|&c| c == 0.0) {
        return Err(NumericsError::EmptySegment { segment });
    }
    let mut out = segment_sum(x, segment_ids, n_segments)?;
    let data = out.data_mut();
    for (seg, row) in data.chunks_mut(d).enumerate() {
        for value in row {
            *value /= counts[seg];
        }
    }
    Ok(out)
}
