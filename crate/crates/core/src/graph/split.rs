use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GkdError, Result};

use super::{Graph, Masks};

fn check_pir(pir: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pir) {
        Ok(())
    } else {
        Err(GkdError::invalid("pir", format!("{pir} outside [0, 1]")))
    }
}

/// Edge-aware privileged split: keeps `round((1 − pir)·|E|)` edges of the
/// complete graph chosen uniformly at random. Nodes, features, labels and
/// masks are untouched.
pub fn split_edges(complete: &Graph, pir: f64, seed: u64) -> Result<Graph> {
    check_pir(pir)?;
    let keep = ((1.0 - pir) * complete.num_edges() as f64).round() as usize;
    let mut order: Vec<usize> = (0..complete.num_edges()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let edges: Vec<(usize, usize)> = order[..keep].iter().map(|&k| complete.edges[k]).collect();
    Graph::new(
        complete.num_nodes,
        edges,
        complete.features.clone(),
        complete.labels.clone(),
        complete.masks.clone(),
    )
}

/// Correspondence between partial-graph node ids and complete-graph ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRemap {
    /// `new_to_old[i]` is the complete-graph id of partial-graph node `i`.
    pub new_to_old: Vec<usize>,
    /// `old_to_new[j]` is the partial-graph id of complete-graph node `j`, if kept.
    pub old_to_new: Vec<Option<usize>>,
}

impl NodeRemap {
    pub fn identity(n: usize) -> Self {
        NodeRemap {
            new_to_old: (0..n).collect(),
            old_to_new: (0..n).map(Some).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.new_to_old.len() == self.old_to_new.len()
            && self.new_to_old.iter().enumerate().all(|(i, &o)| i == o)
    }
}

/// Node-aware privileged split: drops `round(pir·|train|)` train nodes chosen
/// uniformly at random together with every incident edge. Validation and
/// test nodes always survive. Node ids are compacted; the returned remap
/// links them back to the complete graph.
pub fn split_nodes(complete: &Graph, pir: f64, seed: u64) -> Result<(Graph, NodeRemap)> {
    check_pir(pir)?;
    let train = &complete.masks.train;
    let drop_count = (pir * train.len() as f64).round() as usize;
    let mut order = train.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut removed = vec![false; complete.num_nodes];
    for &v in &order[..drop_count] {
        removed[v] = true;
    }
    let new_to_old: Vec<usize> = (0..complete.num_nodes).filter(|&v| !removed[v]).collect();
    if new_to_old.is_empty() {
        return Err(GkdError::invalid("pir", "split would remove every node"));
    }
    let mut old_to_new = vec![None; complete.num_nodes];
    for (new, &old) in new_to_old.iter().enumerate() {
        old_to_new[old] = Some(new);
    }

    let edges = complete
        .edges
        .iter()
        .filter_map(|&(u, v)| Some((old_to_new[u]?, old_to_new[v]?)))
        .collect();
    let features = complete.features.select_rows(&new_to_old);
    let labels = new_to_old.iter().map(|&o| complete.labels[o]).collect();
    let remap_ids =
        |ids: &[usize]| -> Vec<usize> { ids.iter().filter_map(|&o| old_to_new[o]).collect() };
    let masks = Masks {
        train: remap_ids(&complete.masks.train),
        val: remap_ids(&complete.masks.val),
        test: remap_ids(&complete.masks.test),
    };
    let graph = Graph::new(new_to_old.len(), edges, features, labels, masks)?;
    Ok((
        graph,
        NodeRemap {
            new_to_old,
            old_to_new,
        },
    ))
}
