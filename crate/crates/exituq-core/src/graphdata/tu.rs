//! Plain-text TU graph-dataset format.
//!
//! A dataset `NAME` in directory `dir` consists of:
//!
//! * `NAME_A.txt` — one `src, dst` pair per line, 1-based global node ids;
//! * `NAME_graph_indicator.txt` — the owning graph id (1-based) per node;
//! * `NAME_graph_labels.txt` — one integer class label per graph;
//! * `NAME_node_attributes.txt` — optional comma-separated float features;
//! * `NAME_node_labels.txt` — optional integer node labels, used as one-hot
//!   features when no attribute file exists.
//!
//! Undirected datasets store each edge in both orientations; edges are kept
//! exactly as listed. Graph and node class labels may be arbitrary integers
//! and are remapped to contiguous `0..k` in ascending order.

use super::{DataError, Dataset, Graph, Result};
use crate::numerics::Tensor;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        file: path.display().to_string(),
        line: line + 1,
        msg: msg.into(),
    }
}

/// Reads dataset `name` from `dir`.
pub fn read_tu_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    // Owning graph per node (1-based on disk).
    let indicator_path = file("graph_indicator");
    let mut node_graph = Vec::new();
    for (i, line) in read_lines(&indicator_path)?.iter().enumerate() {
        let gid: usize = line
            .parse()
            .map_err(|_| parse_error(&indicator_path, i, format!("bad graph id {line:?}")))?;
        if gid == 0 {
            return Err(parse_error(&indicator_path, i, "graph ids are 1-based"));
        }
        node_graph.push(gid - 1);
    }
    let n_nodes = node_graph.len();
    let n_graphs = node_graph.iter().max().map_or(0, |&g| g + 1);
    if n_graphs == 0 {
        return Err(DataError::Inconsistent(format!("{name}: no nodes listed")));
    }

    // Local node index within its graph, in file order.
    let mut graph_sizes = vec![0usize; n_graphs];
    let mut local_index = Vec::with_capacity(n_nodes);
    for &g in &node_graph {
        local_index.push(graph_sizes[g]);
        graph_sizes[g] += 1;
    }
    if let Some(empty) = graph_sizes.iter().position(|&s| s == 0) {
        return Err(DataError::Inconsistent(format!(
            "{name}: graph {} has no nodes",
            empty + 1
        )));
    }

    // Graph labels, remapped to contiguous 0..k in ascending order.
    let labels_path = file("graph_labels");
    let mut raw_labels = Vec::with_capacity(n_graphs);
    for (i, line) in read_lines(&labels_path)?.iter().enumerate() {
        let label: i64 = line
            .parse()
            .map_err(|_| parse_error(&labels_path, i, format!("bad label {line:?}")))?;
        raw_labels.push(label);
    }
    if raw_labels.len() != n_graphs {
        return Err(DataError::Inconsistent(format!(
            "{name}: {} graph labels for {n_graphs} graphs",
            raw_labels.len()
        )));
    }
    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let class_of = |raw: i64| distinct.iter().position(|&d| d == raw).unwrap();
    let labels: Vec<usize> = raw_labels.iter().map(|&r| class_of(r)).collect();

    // Node features: attributes preferred, node labels as one-hot fallback.
    let attributes_path = file("node_attributes");
    let node_labels_path = file("node_labels");
    let features: Vec<Vec<f64>> = if attributes_path.exists() {
        let lines = read_lines(&attributes_path)?;
        if lines.len() != n_nodes {
            return Err(DataError::Inconsistent(format!(
                "{name}: {} attribute rows for {n_nodes} nodes",
                lines.len()
            )));
        }
        let mut rows = Vec::with_capacity(n_nodes);
        let mut width = None;
        for (i, line) in lines.iter().enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_error(&attributes_path, i, format!("bad attribute row {line:?}")))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(parse_error(
                        &attributes_path,
                        i,
                        format!("attribute width {} != {w}", row.len()),
                    ));
                }
                _ => {}
            }
            rows.push(row);
        }
        rows
    } else if node_labels_path.exists() {
        let lines = read_lines(&node_labels_path)?;
        if lines.len() != n_nodes {
            return Err(DataError::Inconsistent(format!(
                "{name}: {} node labels for {n_nodes} nodes",
                lines.len()
            )));
        }
        let mut raw = Vec::with_capacity(n_nodes);
        for (i, line) in lines.iter().enumerate() {
            let v: i64 = line
                .parse()
                .map_err(|_| parse_error(&node_labels_path, i, format!("bad node label {line:?}")))?;
            raw.push(v);
        }
        let values: BTreeSet<i64> = raw.iter().copied().collect();
        let width = values.len();
        raw.iter()
            .map(|v| {
                let mut row = vec![0.0; width];
                row[values.iter().position(|d| d == v).unwrap()] = 1.0;
                row
            })
            .collect()
    } else {
        return Err(DataError::Inconsistent(format!(
            "{name}: neither {} nor {} exists",
            attributes_path.display(),
            node_labels_path.display()
        )));
    };

    // Edges: 1-based global pairs, each endpoint owned by the same graph.
    let edges_path = file("A");
    let mut graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        let mut parts = line.split(',').map(str::trim);
        let (src, dst) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse_error(&edges_path, i, format!("expected `src, dst`, got {line:?}"))),
        };
        let src: usize = src
            .parse()
            .map_err(|_| parse_error(&edges_path, i, format!("bad node id {src:?}")))?;
        let dst: usize = dst
            .parse()
            .map_err(|_| parse_error(&edges_path, i, format!("bad node id {dst:?}")))?;
        if src == 0 || dst == 0 || src > n_nodes || dst > n_nodes {
            return Err(parse_error(&edges_path, i, format!("node id outside 1..={n_nodes}")));
        }
        let (src, dst) = (src - 1, dst - 1);
        if node_graph[src] != node_graph[dst] {
            return Err(parse_error(
                &edges_path,
                i,
                format!(
                    "edge joins graph {} and graph {}",
                    node_graph[src] + 1,
                    node_graph[dst] + 1
                ),
            ));
        }
        graph_edges[node_graph[src]].push((local_index[src], local_index[dst]));
    }

    // Assemble per-graph feature matrices in file order.
    let mut feature_rows: Vec<Vec<Vec<f64>>> = graph_sizes
        .iter()
        .map(|&s| Vec::with_capacity(s))
        .collect();
    for (node, row) in features.into_iter().enumerate() {
        feature_rows[node_graph[node]].push(row);
    }
    let mut graphs = Vec::with_capacity(n_graphs);
    for (g, rows) in feature_rows.into_iter().enumerate() {
        let node_features = Tensor::from_rows(&rows)
            .map_err(|e| DataError::Inconsistent(format!("{name}: graph {}: {e}", g + 1)))?;
        graphs.push(Graph {
            node_features,
            edges: std::mem::take(&mut graph_edges[g]),
            label: labels[g],
        });
    }
    Dataset::new(name, graphs, distinct.len())
}

/// Writes `dataset` into `dir` in TU format. Labels are written as-is
/// (already contiguous), so a write → read round trip reproduces the dataset
/// exactly.
pub fn write_tu_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let name = &dataset.name;
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut attributes = String::new();
    let mut edges = String::new();
    let mut offset = 0usize;
    for (g, graph) in dataset.graphs.iter().enumerate() {
        writeln!(labels, "{}", graph.label).unwrap();
        for r in 0..graph.n_nodes() {
            writeln!(indicator, "{}", g + 1).unwrap();
            let row: Vec<String> = graph.node_features.row(r).iter().map(f64::to_string).collect();
            writeln!(attributes, "{}", row.join(", ")).unwrap();
        }
        for &(u, v) in &graph.edges {
            writeln!(edges, "{}, {}", u + offset + 1, v + offset + 1).unwrap();
        }
        offset += graph.n_nodes();
    }
    for (suffix, content) in [
        ("A", edges),
        ("graph_indicator", indicator),
        ("graph_labels", labels),
        ("node_attributes", attributes),
    ] {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&path, content).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
