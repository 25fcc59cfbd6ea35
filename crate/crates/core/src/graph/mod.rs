//! Undirected attributed graphs, their normalised propagation operators, and
//! the constructors used to produce complete/partial graph pairs.

mod io;
mod sbm;
mod split;

use std::sync::{Arc, OnceLock};

use crate::error::{GkdError, Result};
use crate::tensor::{SparseMatrix, Tensor};

pub use io::{load_graph, parse_graph, save_graph, GraphFile, MaskFile};
pub use sbm::{sbm_generate, SbmParams};
pub use split::{split_edges, split_nodes, NodeRemap};

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Undirected graph with node features, optional labels and split masks.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted; self-loops are
/// never stored (normalisation adds them).
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<Option<usize>>,
    masks: Masks,
    adjacency: OnceLock<Arc<SparseMatrix>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes
            && self.edges == other.edges
            && self.features == other.features
            && self.labels == other.labels
            && self.masks == other.masks
    }
}

impl Graph {
    /// Validates and assembles a graph. Edge orientation is normalised to
    /// `u < v`; duplicate pairs and self-loops are rejected.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<Option<usize>>,
        masks: Masks,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(GkdError::invalid(
                "num_nodes",
                "graph must have at least one node",
            ));
        }
        if features.rows() != num_nodes {
            return Err(GkdError::invalid(
                "features",
                format!("{} rows for {num_nodes} nodes", features.rows()),
            ));
        }
        if labels.len() != num_nodes {
            return Err(GkdError::invalid(
                "labels",
                format!("{} labels for {num_nodes} nodes", labels.len()),
            ));
        }
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(u, v)| if u <= v { (u, v) } else { (v, u) })
            .collect();
        for &(u, v) in &edges {
            if v >= num_nodes {
                return Err(GkdError::invalid(
                    "edges",
                    format!("edge ({u}, {v}) out of range for {num_nodes} nodes"),
                ));
            }
            if u == v {
                return Err(GkdError::invalid("edges", format!("self-loop at node {u}")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GkdError::invalid(
                "edges",
                format!("duplicate edge ({}, {})", w[0].0, w[0].1),
            ));
        }

        let mut seen = vec![false; num_nodes];
        for (name, ids) in [
            ("masks.train", &masks.train),
            ("masks.val", &masks.val),
            ("masks.test", &masks.test),
        ] {
            for &i in ids {
                if i >= num_nodes {
                    return Err(GkdError::invalid(name, format!("node {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(GkdError::invalid(
                        name,
                        format!("node {i} appears in more than one mask"),
                    ));
                }
            }
        }
        if let Some(&i) = masks.train.iter().find(|&&i| labels[i].is_none()) {
            return Err(GkdError::invalid(
                "masks.train",
                format!("train node {i} has no label"),
            ));
        }

        Ok(Graph {
            num_nodes,
            edges,
            features,
            labels,
            masks,
            adjacency: OnceLock::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    /// One more than the largest label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&m| m + 1)
    }

    /// Labels with unlabeled nodes mapped to `usize::MAX`; only meaningful
    /// where a mask guarantees a label.
    pub fn dense_labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| l.unwrap_or(usize::MAX))
            .collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = if u <= v { (u, v) } else { (v, u) };
        self.edges.binary_search(&key).is_ok()
    }

    /// Neighbour counts, self-loop excluded.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`, built once and cached.
    pub fn normalized_adjacency(&self) -> Arc<SparseMatrix> {
        Arc::clone(
            self.adjacency
                .get_or_init(|| Arc::new(normalize_adjacency(self))),
        )
    }

    /// `I − D̃^{-1/2} (A + I) D̃^{-1/2}`.
    pub fn laplacian(&self) -> SparseMatrix {
        laplacian_sym(self)
    }
}

/// Symmetrically normalised adjacency with self-loops.
pub fn normalize_adjacency(g: &Graph) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| 1.0 / ((d + 1) as f64).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(g.num_nodes + 2 * g.edges.len());
    for i in 0..g.num_nodes {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    for &(u, v) in &g.edges {
        let w = inv_sqrt[u] * inv_sqrt[v];
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    SparseMatrix::from_triplets(g.num_nodes, g.num_nodes, triplets).expect("edges validated")
}

/// Symmetric normalised Laplacian `I − Â_N`.
pub fn laplacian_sym(g: &Graph) -> SparseMatrix {
    let adj = g.normalized_adjacency();
    let n = g.num_nodes;
    let mut triplets = Vec::with_capacity(adj.nnz());
    for r in 0..n {
        for (c, v) in adj.row_entries(r) {
            let identity = if r == c { 1.0 } else { 0.0 };
            triplets.push((r, c, identity - v));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets).expect("square")
}

/// How node weights μ(v) are assigned in kernel aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeasureMode {
    #[default]
    Uniform,
    /// `1 / (deg(v) + 1)`, counting the implicit self-loop.
    InverseDegree,
}

/// Per-node positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub mode: MeasureMode,
    pub values: Vec<f64>,
}

impl Measure {
    pub fn uniform(n: usize) -> Self {
        Measure {
            mode: MeasureMode::Uniform,
            values: vec![1.0; n],
        }
    }

    pub fn for_graph(g: &Graph, mode: MeasureMode) -> Self {
        let values = match mode {
            MeasureMode::Uniform => vec![1.0; g.num_nodes()],
            MeasureMode::InverseDegree => g
                .degrees()
                .into_iter()
                .map(|d| 1.0 / (d + 1) as f64)
                .collect(),
        };
        Measure { mode, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
