use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::tensor::Tensor;

use super::{Graph, Masks};

/// Parameters of a planted-partition stochastic block model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Samples an SBM graph.
///
/// Features are the block indicator (dimension `block % feature_dim`) plus
/// isotropic Gaussian noise; labels are block ids. Each block is split into
/// train/val/test at 2:1:1.
pub fn sbm_generate(params: &SbmParams) -> Result<Graph> {
    for (name, p) in [("p_in", params.p_in), ("p_out", params.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GkdError::invalid(name, format!("{p} outside [0, 1]")));
        }
    }
    if params.blocks.is_empty() || params.blocks.contains(&0) {
        return Err(GkdError::invalid(
            "blocks",
            "need at least one block, each of size >= 1",
        ));
    }
    if params.feature_dim == 0 {
        return Err(GkdError::invalid("feature_dim", "must be >= 1"));
    }
    if !(params.noise_sigma >= 0.0 && params.noise_sigma.is_finite()) {
        return Err(GkdError::invalid("noise_sigma", "must be finite and >= 0"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let block_of: Vec<usize> = params
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block_of.len();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let noise = Normal::new(0.0, params.noise_sigma)
        .map_err(|e| GkdError::invalid("noise_sigma", e.to_string()))?;
    let mut features = Tensor::zeros(n, params.feature_dim);
    for (i, &b) in block_of.iter().enumerate() {
        for j in 0..params.feature_dim {
            let signal = if j == b % params.feature_dim {
                1.0
            } else {
                0.0
            };
            features.set(i, j, signal + noise.sample(&mut rng));
        }
    }

    let mut masks = Masks::default();
    let mut start = 0;
    for &size in &params.blocks {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let n_train = (size as f64 * 0.5).round() as usize;
        let n_val = ((size as f64 * 0.25).round() as usize).min(size - n_train);
        masks.train.extend_from_slice(&members[..n_train]);
        masks
            .val
            .extend_from_slice(&members[n_train..n_train + n_val]);
        masks.test.extend_from_slice(&members[n_train + n_val..]);
        start += size;
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();

    let labels = block_of.into_iter().map(Some).collect();
    Graph::new(n, edges, features, labels, masks)
}
