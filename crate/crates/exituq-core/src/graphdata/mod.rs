//! Graph datasets: containers, batching, and split utilities.
//!
//! A [`Graph`] is a node-feature matrix plus a directed edge list over local
//! node indices and a class label. A [`Dataset`] is a validated collection of
//! graphs sharing one feature width and label space. Mini-batching packs
//! several graphs into one disjoint union so the message-passing kernels can
//! run over a single edge list.

mod synthetic;
mod tu;

pub use synthetic::{generate_admissions, SyntheticConfig};
pub use tu::{read_tu_dataset, write_tu_dataset};

use crate::numerics::{EdgeList, Tensor};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::rc::Rc;
use thiserror::Error;

/// Errors raised while ingesting, generating, or splitting datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One attributed, directed graph with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// `[n_nodes × feature_dim]` node features.
    pub node_features: Tensor,
    /// Directed edges over local node indices.
    pub edges: Vec<(usize, usize)>,
    pub label: usize,
}

impl Graph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }
}

/// A named collection of graphs with a shared feature width and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl Dataset {
    /// Validates feature widths, label range, edge endpoints, and non-empty
    /// node sets before accepting the graphs.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        let name = name.into();
        if graphs.is_empty() {
            return Err(DataError::Inconsistent(format!("dataset {name} has no graphs")));
        }
        if num_classes == 0 {
            return Err(DataError::Inconsistent("num_classes must be positive".into()));
        }
        let feature_dim = graphs[0].node_features.cols();
        for (i, g) in graphs.iter().enumerate() {
            if g.node_features.shape().len() != 2 || g.node_features.cols() != feature_dim {
                return Err(DataError::Inconsistent(format!(
                    "graph {i}: feature shape {:?}, expected width {feature_dim}",
                    g.node_features.shape()
                )));
            }
            if g.n_nodes() == 0 {
                return Err(DataError::Inconsistent(format!("graph {i} has no nodes")));
            }
            if g.label >= num_classes {
                return Err(DataError::Inconsistent(format!(
                    "graph {i}: label {} outside 0..{num_classes}",
                    g.label
                )));
            }
            let n = g.n_nodes();
            if let Some(&(u, v)) = g.edges.iter().find(|&&(u, v)| u >= n || v >= n) {
                return Err(DataError::Inconsistent(format!(
                    "graph {i}: edge ({u}, {v}) outside {n} nodes"
                )));
            }
        }
        Ok(Self { name, graphs, num_classes, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Graph count per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::n_nodes).sum()
    }

    /// New dataset holding the graphs at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let graphs = indices
            .iter()
            .map(|&i| {
                self.graphs.get(i).cloned().ok_or_else(|| {
                    DataError::InvalidSplit(format!(
                        "index {i} out of range for {} graphs",
                        self.graphs.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, graphs, self.num_classes)
    }

    pub fn total_edges(&self) -> usize {
        self.graphs.iter().map(|g| g.edges.len()).sum()
    }
}

/// Disjoint union of several graphs, ready for the numeric kernels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[total_nodes × feature_dim]` stacked node features.
    pub features: Tensor,
    /// Edges reindexed into the stacked node space.
    pub edges: Rc<EdgeList>,
    /// Owning graph (position within the batch) per stacked node row.
    pub graph_ids: Rc<Vec<usize>>,
    /// First stacked row of each graph, plus a final total-node sentinel.
    pub node_offsets: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn n_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Packs `dataset.graphs[indices]` into one disjoint union, preserving order.
pub fn make_batch(dataset: &Dataset, indices: &[usize]) -> Result<Batch> {
    if indices.is_empty() {
        return Err(DataError::Inconsistent("cannot batch zero graphs".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(DataError::Inconsistent(format!(
            "graph index {bad} outside dataset of {}",
            dataset.len()
        )));
    }
    let d = dataset.feature_dim;
    let total_nodes: usize = indices.iter().map(|&i| dataset.graphs[i].n_nodes()).sum();
    let mut features = Vec::with_capacity(total_nodes * d);
    let mut edges = Vec::new();
    let mut graph_ids = Vec::with_capacity(total_nodes);
    let mut node_offsets = Vec::with_capacity(indices.len() + 1);
    let mut labels = Vec::with_capacity(indices.len());
    let mut offset = 0;
    for (pos, &gi) in indices.iter().enumerate() {
        let g = &dataset.graphs[gi];
        node_offsets.push(offset);
        features.extend_from_slice(g.node_features.data());
        graph_ids.extend(std::iter::repeat(pos).take(g.n_nodes()));
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        labels.push(g.label);
        offset += g.n_nodes();
    }
    node_offsets.push(offset);
    let features = Tensor::new(vec![total_nodes, d], features)
        .map_err(|e| DataError::Inconsistent(e.to_string()))?;
    let edges = EdgeList::new(edges, total_nodes).map_err(|e| DataError::Inconsistent(e.to_string()))?;
    Ok(Batch {
        features,
        edges: Rc::new(edges),
        graph_ids: Rc::new(graph_ids),
        node_offsets,
        labels,
    })
}

/// Splits a batch back into its member graphs (inverse of [`make_batch`]).
pub fn unbatch(batch: &Batch) -> Vec<Graph> {
    let d = batch.features.cols();
    let mut graphs = Vec::with_capacity(batch.n_graphs());
    for pos in 0..batch.n_graphs() {
        let (start, end) = (batch.node_offsets[pos], batch.node_offsets[pos + 1]);
        let rows: Vec<Vec<f64>> = (start..end).map(|r| batch.features.row(r).to_vec()).collect();
        let node_features = Tensor::new(vec![end - start, d], rows.concat())
            .expect("batch rows are rectangular");
        let edges = batch
            .edges
            .edges()
            .iter()
            .filter(|&&(u, _)| u >= start && u < end)
            .map(|&(u, v)| (u - start, v - start))
            .collect();
        graphs.push(Graph { node_features, edges, label: batch.labels[pos] });
    }
    graphs
}

/// Train/validation/test index sets for one cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split with a stratified validation carve-out.
///
/// Each class's indices are shuffled once (seeded) and dealt round-robin into
/// `k` folds, so per-fold class counts differ by at most one. Fold `f` uses
/// deal `f` as its test set; `val_fraction` of the remainder (per class,
/// rounded up, at least one graph when the class has any) becomes validation.
pub fn stratified_k_fold(
    dataset: &Dataset,
    k: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(DataError::InvalidSplit(format!("need at least 2 folds, got {k}")));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(DataError::InvalidSplit(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let counts = dataset.class_counts();
    if let Some((class, &count)) = counts.iter().enumerate().find(|&(_, &c)| c < k) {
        return Err(DataError::InvalidSplit(format!(
            "class {class} has {count} graphs, fewer than {k} folds"
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, g) in dataset.graphs.iter().enumerate() {
        by_class[g.label].push(i);
    }
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }
    // Deal each class round-robin into k buckets.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in &by_class {
        for (j, &idx) in class.iter().enumerate() {
            buckets[j % k].push(idx);
        }
    }
    let mut splits = Vec::with_capacity(k);
    for f in 0..k {
        let test = buckets[f].clone();
        // Pool the other buckets per class so the validation carve-out is
        // stratified too.
        let mut pool_by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
        for (b, bucket) in buckets.iter().enumerate() {
            if b == f {
                continue;
            }
            for &idx in bucket {
                pool_by_class[dataset.graphs[idx].label].push(idx);
            }
        }
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for class_pool in &mut pool_by_class {
            class_pool.shuffle(&mut rng);
            let n_val = if val_fraction == 0.0 {
                0
            } else {
                ((class_pool.len() as f64 * val_fraction).ceil() as usize).max(1)
            };
            validation.extend_from_slice(&class_pool[..n_val]);
            train.extend_from_slice(&class_pool[n_val..]);
        }
        train.sort_unstable();
        validation.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        splits.push(FoldSplit { fold: f, train, validation, test });
    }
    Ok(splits)
}

/// Removes one class: returns the remaining graphs with labels remapped to
/// stay contiguous (in-distribution) and the removed graphs (out-of-
/// distribution). OOD labels are set to 0 as a placeholder — models trained on
/// the in-distribution set have no valid class for them.
pub fn hold_out_class(dataset: &Dataset, class: usize) -> Result<(Dataset, Dataset)> {
    if class >= dataset.num_classes {
        return Err(DataError::InvalidSplit(format!(
            "class {class} outside 0..{}",
            dataset.num_classes
        )));
    }
    if dataset.num_classes < 2 {
        return Err(DataError::InvalidSplit("cannot hold out the only class".into()));
    }
    let mut id_graphs = Vec::new();
    let mut ood_graphs = Vec::new();
    for g in &dataset.graphs {
        if g.label == class {
            ood_graphs.push(Graph { label: 0, ..g.clone() });
        } else {
            let label = if g.label > class { g.label - 1 } else { g.label };
            id_graphs.push(Graph { label, ..g.clone() });
        }
    }
    if ood_graphs.is_empty() {
        return Err(DataError::InvalidSplit(format!("class {class} has no graphs to hold out")));
    }
    let id = Dataset::new(format!("{}-id", dataset.name), id_graphs, dataset.num_classes - 1)?;
    let ood = Dataset::new(format!("{}-ood", dataset.name), ood_graphs, dataset.num_classes - 1)?;
    Ok((id, ood))
}

/// Balances classes by randomly discarding majority-class graphs until every
/// class matches the smallest one. Surviving graphs keep their original
/// relative order.
pub fn undersample_majority(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let counts = dataset.class_counts();
    let min = counts
        .iter()
        .copied()
        .min()
        .filter(|&m| m > 0)
        .ok_or_else(|| DataError::InvalidSplit("a class has no graphs".into()))?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, g) in dataset.graphs.iter().enumerate() {
        by_class[g.label].push(i);
    }
    for class in &mut by_class {
        class.shuffle(&mut rng);
        keep.extend_from_slice(&class[..min]);
    }
    keep.sort_unstable();
    let graphs = keep.iter().map(|&i| dataset.graphs[i].clone()).collect();
    Dataset::new(dataset.name.clone(), graphs, dataset.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(per_class: &[usize]) -> Dataset {
        let mut graphs = Vec::new();
        for (label, &count) in per_class.iter().enumerate() {
            for j in 0..count {
                let n = 2 + (j % 3);
                let features = Tensor::full(&[n, 4], label as f64 + j as f64 / 100.0);
                let edges = (0..n - 1).map(|v| (v, v + 1)).collect();
                graphs.push(Graph { node_features: features, edges, label });
            }
        }
        Dataset::new("toy", graphs, per_class.len()).unwrap()
    }

    #[test]
    fn batch_round_trips() {
        let ds = toy_dataset(&[3, 3]);
        let indices = [4, 0, 2];
        let batch = make_batch(&ds, &indices).unwrap();
        assert_eq!(batch.n_graphs(), 3);
        assert_eq!(batch.n_nodes(), indices.iter().map(|&i| ds.graphs[i].n_nodes()).sum::<usize>());
        let restored = unbatch(&batch);
        for (round_tripped, &orig) in restored.iter().zip(&indices) {
            assert_eq!(round_tripped, &ds.graphs[orig]);
        }
    }

    #[test]
    fn batch_reindexes_edges_disjointly() {
        let ds = toy_dataset(&[2, 2]);
        let batch = make_batch(&ds, &[0, 1]).unwrap();
        let n0 = ds.graphs[0].n_nodes();
        for &(u, v) in batch.edges.edges() {
            let gu = batch.graph_ids[u];
            let gv = batch.graph_ids[v];
            assert_eq!(gu, gv, "edge ({u},{v}) crosses graphs");
            if gu == 1 {
                assert!(u >= n0 && v >= n0);
            }
        }
    }

    #[test]
    fn kfold_partitions_and_stratifies() {
        let ds = toy_dataset(&[20, 15, 10]);
        let splits = stratified_k_fold(&ds, 5, 0.1, 42).unwrap();
        assert_eq!(splits.len(), 5);
        // Test sets partition the dataset.
        let mut seen = vec![0usize; ds.len()];
        for s in &splits {
            for &i in &s.test {
                seen[i] += 1;
            }
            // Within a fold the three parts are disjoint and exhaustive.
            let mut all: Vec<usize> =
                s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            // Class proportions in the test set are within one of the deal.
            for (class, &count) in ds.class_counts().iter().enumerate() {
                let in_test =
                    s.test.iter().filter(|&&i| ds.graphs[i].label == class).count();
                let expected = count / 5;
                assert!(
                    in_test == expected || in_test == expected + 1,
                    "fold {} class {class}: {in_test} vs expected ~{expected}",
                    s.fold
                );
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "test folds must partition the dataset");
    }

    #[test]
    fn kfold_is_seed_deterministic() {
        let ds = toy_dataset(&[12, 12]);
        let a = stratified_k_fold(&ds, 4, 0.1, 9).unwrap();
        let b = stratified_k_fold(&ds, 4, 0.1, 9).unwrap();
        let c = stratified_k_fold(&ds, 4, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn kfold_rejects_thin_classes() {
        let ds = toy_dataset(&[10, 3]);
        let err = stratified_k_fold(&ds, 5, 0.1, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn hold_out_remaps_labels() {
        let ds = toy_dataset(&[4, 4, 4]);
        let (id, ood) = hold_out_class(&ds, 1).unwrap();
        assert_eq!(id.num_classes, 2);
        assert_eq!(id.len(), 8);
        assert_eq!(ood.len(), 4);
        // Old class 2 became class 1; old class 0 stayed 0.
        assert_eq!(id.class_counts(), vec![4, 4]);
    }

    #[test]
    fn undersample_balances_to_minority() {
        let ds = toy_dataset(&[10, 4, 7]);
        let balanced = undersample_majority(&ds, 3).unwrap();
        assert_eq!(balanced.class_counts(), vec![4, 4, 4]);
        // Deterministic given the seed.
        let again = undersample_majority(&ds, 3).unwrap();
        assert_eq!(balanced, again);
    }

    #[test]
    fn dataset_rejects_bad_graphs() {
        let good = Graph {
            node_features: Tensor::full(&[2, 3], 1.0),
            edges: vec![(0, 1)],
            label: 0,
        };
        let bad_edge = Graph {
            node_features: Tensor::full(&[2, 3], 1.0),
            edges: vec![(0, 5)],
            label: 0,
        };
        assert!(Dataset::new("x", vec![good.clone(), bad_edge], 1).is_err());
        let bad_label = Graph { label: 3, ..good.clone() };
        assert!(Dataset::new("x", vec![bad_label], 3).is_err());
        assert!(Dataset::new("x", vec![good], 3).is_ok());
        let wide = Graph {
            node_features: Tensor::full(&[2, 5], 1.0),
            edges: vec![],
            label: 0,
        };
        let narrow = Graph {
            node_features: Tensor::full(&[2, 3], 1.0),
            edges: vec![],
            label: 0,
        };
        assert!(Dataset::new("x", vec![wide, narrow], 1).is_err());
    }
}
