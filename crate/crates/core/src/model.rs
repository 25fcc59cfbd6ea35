//! GCN and SGC backbones.
//!
//! A forward pass records on a [`Tape`] and returns both the logits and the
//! per-layer features `H^(0..L)` that the distillation losses consume.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::graph::Graph;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `H^(l+1) = relu(Â H^(l) Θ^(l))`, final layer linear.
    Gcn,
    /// `Â^L X Θ`.
    Sgc,
}

/// A GNN backbone and its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    kind: ModelKind,
    num_layers: usize,
    dims: Vec<usize>,
    weights: Vec<Tensor>,
}

/// Outputs of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    /// `H^(0)` (input features) through `H^(L)` (logits).
    pub trace: Vec<Var>,
    /// Tape handles of the weights, in [`GnnModel::weights`] order.
    pub params: Vec<Var>,
}

impl GnnModel {
    /// GCN with layer widths `dims = [d_in, d_1, …, d_out]`, zero-initialised.
    pub fn gcn(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(GkdError::invalid(
                "dims",
                "gcn needs at least [d_in, d_out], all positive",
            ));
        }
        let weights = dims.windows(2).map(|w| Tensor::zeros(w[0], w[1])).collect();
        Ok(GnnModel {
            kind: ModelKind::Gcn,
            num_layers: dims.len() - 1,
            dims,
            weights,
        })
    }

    /// `layers`-deep GCN with a constant hidden width.
    pub fn gcn_uniform(d_in: usize, hidden: usize, layers: usize, d_out: usize) -> Result<Self> {
        if layers == 0 {
            return Err(GkdError::invalid("layers", "must be >= 1"));
        }
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(d_out);
        Self::gcn(dims)
    }

    /// SGC with `steps` propagation steps and a single `d_in × d_out` map.
    pub fn sgc(d_in: usize, d_out: usize, steps: usize) -> Result<Self> {
        if d_in == 0 || d_out == 0 || steps == 0 {
            return Err(GkdError::invalid(
                "sgc",
                "dimensions and steps must be positive",
            ));
        }
        Ok(GnnModel {
            kind: ModelKind::Sgc,
            num_layers: steps,
            dims: vec![d_in, d_out],
            weights: vec![Tensor::zeros(d_in, d_out)],
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Width of `H^(l)` in the forward trace.
    pub fn trace_dim(&self, l: usize) -> usize {
        match self.kind {
            ModelKind::Gcn => self.dims[l],
            ModelKind::Sgc if l == self.num_layers => self.dims[1],
            ModelKind::Sgc => self.dims[0],
        }
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Replaces all weights; shapes must match.
    pub fn set_weights(&mut self, weights: Vec<Tensor>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(GkdError::dim(
                "set_weights",
                self.weights.len(),
                weights.len(),
            ));
        }
        for (old, new) in self.weights.iter().zip(&weights) {
            if old.shape() != new.shape() {
                return Err(GkdError::dim(
                    "set_weights",
                    format!("{:?}", old.shape()),
                    format!("{:?}", new.shape()),
                ));
            }
        }
        self.weights = weights.into_iter().map(|w| w.detached()).collect();
        Ok(())
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    /// Xavier/Glorot uniform: every entry of a `fan_in × fan_out` weight is
    /// drawn from `U(−a, a)`, `a = √(6 / (fan_in + fan_out))`.
    pub fn init_xavier(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut self.weights {
            let bound = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for x in w.data_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
    }

    /// Records a forward pass on `g`. Weights enter the tape as trainable
    /// parameters when `trainable` is set, as constants otherwise.
    pub fn forward(&self, tape: &mut Tape, g: &Graph, trainable: bool) -> Result<ForwardPass> {
        if g.feature_dim() != self.dims[0] {
            return Err(GkdError::dim(
                "forward",
                format!("{} input features", self.dims[0]),
                g.feature_dim(),
            ));
        }
        let params: Vec<Var> = self
            .weights
            .iter()
            .map(|w| {
                if trainable {
                    tape.param(w)
                } else {
                    tape.constant(w.detached())
                }
            })
            .collect();
        self.forward_with(tape, g, params)
    }

    /// Forward pass using weight values already on the tape, in
    /// [`GnnModel::weights`] order; the stored weights only fix the shapes.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        g: &Graph,
        params: Vec<Var>,
    ) -> Result<ForwardPass> {
        if g.feature_dim() != self.dims[0] {
            return Err(GkdError::dim(
                "forward",
                format!("{} input features", self.dims[0]),
                g.feature_dim(),
            ));
        }
        if params.len() != self.weights.len()
            || params
                .iter()
                .zip(&self.weights)
                .any(|(&p, w)| tape.value(p).shape() != w.shape())
        {
            return Err(GkdError::dim(
                "forward",
                format!("{} weights matching the model", self.weights.len()),
                params.len(),
            ));
        }
        let adj = g.normalized_adjacency();
        let x = tape.constant(g.features().detached());
        let mut trace = vec![x];
        let mut h = x;
        match self.kind {
            ModelKind::Gcn => {
                for (l, &w) in params.iter().enumerate() {
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.spmm(&adj, hw)?;
                    h = if l + 1 < self.num_layers {
                        tape.relu(agg)
                    } else {
                        agg
                    };
                    trace.push(h);
                }
            }
            ModelKind::Sgc => {
                for step in 0..self.num_layers {
                    h = tape.spmm(&adj, h)?;
                    if step + 1 < self.num_layers {
                        trace.push(h);
                    }
                }
                h = tape.matmul(h, params[0])?;
                trace.push(h);
            }
        }
        Ok(ForwardPass {
            logits: h,
            trace,
            params,
        })
    }

    /// Logits without gradient bookkeeping.
    pub fn predict(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, g, false)?;
        Ok(tape.value(pass.logits).detached())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            num_layers: self.num_layers,
            dims: self.dims.clone(),
            weights: self.weights.iter().map(|w| w.data().to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = match ckpt.kind {
            ModelKind::Gcn => {
                let m = Self::gcn(ckpt.dims.clone())?;
                if m.num_layers != ckpt.num_layers {
                    return Err(GkdError::invalid(
                        "num_layers",
                        "gcn depth must equal dims.len() - 1",
                    ));
                }
                m
            }
            ModelKind::Sgc => {
                if ckpt.dims.len() != 2 {
                    return Err(GkdError::invalid(
                        "dims",
                        "sgc checkpoint needs [d_in, d_out]",
                    ));
                }
                Self::sgc(ckpt.dims[0], ckpt.dims[1], ckpt.num_layers)?
            }
        };
        if ckpt.weights.len() != model.weights.len() {
            return Err(GkdError::invalid(
                "weights",
                format!(
                    "expected {} arrays, got {}",
                    model.weights.len(),
                    ckpt.weights.len()
                ),
            ));
        }
        for (slot, flat) in model.weights.iter_mut().zip(&ckpt.weights) {
            *slot = Tensor::from_vec(slot.rows(), slot.cols(), flat.clone())
                .map_err(|e| GkdError::invalid("weights", e.to_string()))?;
        }
        Ok(model)
    }
}

/// Architecture of a backbone, independent of the data it is applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// GCN depth, or SGC propagation steps.
    pub layers: usize,
    /// GCN hidden width; ignored for SGC.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    32
}

impl Default for ModelConfig {
    /// Three-layer GCN with hidden width 32.
    fn default() -> Self {
        ModelConfig::gcn(3, default_hidden())
    }
}

impl ModelConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(GkdError::invalid(field, "layers and hidden must be >= 1"));
        }
        Ok(())
    }

    pub fn gcn(layers: usize, hidden: usize) -> Self {
        ModelConfig {
            kind: ModelKind::Gcn,
            layers,
            hidden,
        }
    }

    /// Builds and Xavier-initialises the model for the given input and output widths.
    pub fn build(&self, d_in: usize, d_out: usize, seed: u64) -> Result<GnnModel> {
        let mut model = match self.kind {
            ModelKind::Gcn => GnnModel::gcn_uniform(d_in, self.hidden, self.layers, d_out)?,
            ModelKind::Sgc => GnnModel::sgc(d_in, d_out, self.layers)?,
        };
        model.init_xavier(seed);
        Ok(model)
    }
}

/// Serialisable weights: dims plus one flat row-major array per weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub num_layers: usize,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

pub fn save_checkpoint(model: &GnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(&model.to_checkpoint()).expect("checkpoint serialises");
    text.push('\n');
    fs::write(path, text).map_err(|source| GkdError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GnnModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GkdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(GkdError::from_json)?;
    GnnModel::from_checkpoint(&ckpt)
}

/// Fraction of `mask` whose arg-max logit equals the label (first index wins ties).
/// Mean cross-entropy of the masked labelled rows; 0 for an empty mask.
pub fn masked_cross_entropy(logits: &Tensor, labels: &[Option<usize>], mask: &[usize]) -> f64 {
    let scored: Vec<f64> = mask
        .iter()
        .filter_map(|&i| labels[i].map(|y| (i, y)))
        .map(|(i, y)| {
            let (probs, _) = crate::tensor::softmax_row(logits.row(i), 1.0);
            -probs[y].max(f64::MIN_POSITIVE).ln()
        })
        .collect();
    if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

pub fn accuracy(logits: &Tensor, labels: &[Option<usize>], mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    let correct = mask
        .iter()
        .filter(|&&i| {
            let row = logits.row(i);
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0;
            labels[i] == Some(pred)
        })
        .count();
    correct as f64 / mask.len() as f64
}

/// Runs `steps` forward-Euler steps `X ← X − L X` of the graph heat equation
/// alongside `steps` applications of `Â_N`, returning the largest entrywise
/// gap between the two trajectories' end points.
pub fn sgc_euler_equivalence(g: &Graph, x0: &Tensor, steps: usize) -> Result<f64> {
    if x0.rows() != g.num_nodes() {
        return Err(GkdError::dim(
            "sgc_euler_equivalence",
            g.num_nodes(),
            x0.rows(),
        ));
    }
    let lap = g.laplacian();
    let adj = g.normalized_adjacency();
    let mut euler = x0.detached();
    let mut propagated = x0.detached();
    for _ in 0..steps {
        let lx = lap.mul_dense(&euler)?;
        euler = euler.sub(&lx)?;
        propagated = adj.mul_dense(&propagated)?;
    }
    euler.max_abs_diff(&propagated)
}
