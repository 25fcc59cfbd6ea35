use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::tensor::Tensor;

use super::{Graph, Masks};

/// On-disk graph document.
///
/// ```json
/// {"num_nodes": 3,
///  "features": [[0.1, 0.2], [0.0, 1.0], [1.0, 0.0]],
///  "labels": [0, 1, -1],
///  "edges": [[0, 1], [1, 2]],
///  "masks": {"train": [0], "val": [1], "test": []}}
/// ```
///
/// Labels use `-1` for unlabeled nodes; each undirected edge appears once
/// with `u < v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub num_nodes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub edges: Vec<[usize; 2]>,
    pub masks: MaskFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskFile {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            num_nodes: g.num_nodes(),
            features: (0..g.num_nodes())
                .map(|i| g.features().row(i).to_vec())
                .collect(),
            labels: g
                .labels()
                .iter()
                .map(|l| l.map_or(-1, |c| c as i64))
                .collect(),
            edges: g.edges().iter().map(|&(u, v)| [u, v]).collect(),
            masks: MaskFile {
                train: g.masks().train.clone(),
                val: g.masks().val.clone(),
                test: g.masks().test.clone(),
            },
        }
    }
}

impl TryFrom<GraphFile> for Graph {
    type Error = GkdError;

    fn try_from(file: GraphFile) -> Result<Graph> {
        if file.features.len() != file.num_nodes {
            return Err(GkdError::invalid(
                "features",
                format!("{} rows for {} nodes", file.features.len(), file.num_nodes),
            ));
        }
        let features = Tensor::from_rows(&file.features)
            .map_err(|e| GkdError::invalid("features", e.to_string()))?;
        let labels = file
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| match l {
                -1 => Ok(None),
                l if l >= 0 => Ok(Some(l as usize)),
                l => Err(GkdError::invalid(
                    "labels",
                    format!("label {l} at node {i}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        for &[u, v] in &file.edges {
            if u >= v {
                return Err(GkdError::invalid(
                    "edges",
                    format!("edge [{u}, {v}] must satisfy u < v"),
                ));
            }
        }
        let masks = Masks {
            train: file.masks.train,
            val: file.masks.val,
            test: file.masks.test,
        };
        let edges = file.edges.iter().map(|&[u, v]| (u, v)).collect();
        Graph::new(file.num_nodes, edges, features, labels, masks)
    }
}

/// Parses a graph document, mapping serde failures to the field they name.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let file: GraphFile = serde_json::from_str(text).map_err(GkdError::from_json)?;
    Graph::try_from(file)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GkdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&text)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(&GraphFile::from(g)).expect("graph serialises");
    text.push('\n');
    fs::write(path, text).map_err(|source| GkdError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"num_nodes": 1, "labels": [0], "edges": [], "masks": {"train": [], "val": [], "test": []}}"#;
        match parse_graph(text) {
            Err(GkdError::Parse { field, .. }) => assert_eq!(field, "features"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edge_out_of_range_is_validation_error() {
        let text = r#"{"num_nodes": 2, "features": [[0.0], [1.0]], "labels": [0, 1],
                       "edges": [[0, 2]], "masks": {"train": [], "val": [], "test": []}}"#;
        assert!(matches!(
            parse_graph(text),
            Err(GkdError::Validation { .. })
        ));
    }

    #[test]
    fn unlabeled_sentinel_round_trips() {
        let text = r#"{"num_nodes": 2, "features": [[0.5], [1.0]], "labels": [1, -1],
                       "edges": [[0, 1]], "masks": {"train": [0], "val": [], "test": [1]}}"#;
        let g = parse_graph(text).unwrap();
        assert_eq!(g.labels(), &[Some(1), None]);
        let back = GraphFile::from(&g);
        assert_eq!(back.labels, vec![1, -1]);
    }
}
