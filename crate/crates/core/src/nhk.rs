//! Neural heat kernel (NHK) instantiations and exact heat-kernel oracles.
//!
//! The learned kernels map a layer's node features `H` (n×d) to an n×n
//! similarity matrix recorded on the tape:
//!
//! - Gauss-Weierstrass: `K_ij = exp(−‖h_i − h_j‖² / 4T)`
//! - Sigmoid: `K_ij = tanh(a⟨h_i, h_j⟩ + b)`
//! - Randomized: `K = (1/m) Σ_k w_k σ(H W_kᵀ) σ(H W_kᵀ)ᵀ` with fixed
//!   Gaussian projections `W_k` (s×d) and `σ = tanh`
//!
//! The oracles compute `e^{−tL}` for a symmetric Laplacian by full
//! eigendecomposition and its truncated eigen-expansion.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::graph::Measure;
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

/// Which kernel to distil through, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gauss {
        t: f64,
    },
    Sigmoid {
        #[serde(default = "one")]
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Randomized {
        /// Time scale of the decay weights `w_k = exp(−T k / m)`.
        t: f64,
        m: usize,
        /// Projection width; `2 d` when absent.
        #[serde(default)]
        s: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    /// Learned inverse kernel; handled by [`crate::distill::InverseNhkMapper`].
    Parametric,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gauss { t: 1.0 }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gauss { t } | KernelSpec::Randomized { t, .. }
                if !(t > 0.0 && t.is_finite()) =>
            {
                Err(GkdError::invalid(
                    "kernel.t",
                    format!("{t} must be positive"),
                ))
            }
            KernelSpec::Randomized { m: 0, .. } => {
                Err(GkdError::invalid("kernel.m", "must be >= 1"))
            }
            KernelSpec::Randomized { s: Some(0), .. } => {
                Err(GkdError::invalid("kernel.s", "must be >= 1"))
            }
            KernelSpec::Sigmoid { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(GkdError::invalid("kernel.a", "a and b must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, KernelSpec::Parametric)
    }

    /// Prepares the kernel for `d`-dimensional features.
    pub fn instantiate(&self, d: usize) -> Result<Nhk> {
        self.validate()?;
        match *self {
            KernelSpec::Gauss { t } => Ok(Nhk::Gauss { t }),
            KernelSpec::Sigmoid { a, b } => Ok(Nhk::Sigmoid { a, b }),
            KernelSpec::Randomized { t, m, s, seed } => Ok(Nhk::Randomized {
                projections: RandomProjections::generate(seed, m, s.unwrap_or(2 * d), d),
                weights: decay_weights(t, m),
            }),
            KernelSpec::Parametric => Err(GkdError::invalid(
                "kernel.kind",
                "parametric kernels are learned, not instantiated",
            )),
        }
    }
}

/// Randomized-kernel decay schedule `w_k = exp(−T k / m)`, `k = 0..m`.
pub fn decay_weights(t: f64, m: usize) -> Vec<f64> {
    (0..m).map(|k| (-t * k as f64 / m as f64).exp()).collect()
}

/// Fixed Gaussian projection matrices `W_0..W_{m−1}`, each s×d with i.i.d.
/// standard normal entries, reproducible from `(seed, m, s, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjections {
    seed: u64,
    s: usize,
    d: usize,
    /// Each `W_kᵀ` (d×s), the orientation the forward pass multiplies by.
    transposed: Vec<Tensor>,
}

impl RandomProjections {
    pub fn generate(seed: u64, m: usize, s: usize, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((d as u64) << 32) ^ s as u64);
        let transposed = (0..m)
            .map(|_| {
                let w = Tensor::from_fn(s, d, |_, _| StandardNormal.sample(&mut rng));
                w.transpose()
            })
            .collect();
        RandomProjections {
            seed,
            s,
            d,
            transposed,
        }
    }

    /// Builds from explicit s×d matrices.
    pub fn from_matrices(matrices: &[Tensor]) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| GkdError::invalid("projections", "need at least one matrix"))?;
        let (s, d) = first.shape();
        if let Some(bad) = matrices.iter().find(|w| w.shape() != (s, d)) {
            return Err(GkdError::dim(
                "projections",
                format!("{s}x{d}"),
                format!("{:?}", bad.shape()),
            ));
        }
        Ok(RandomProjections {
            seed: 0,
            s,
            d,
            transposed: matrices.iter().map(Tensor::transpose).collect(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn m(&self) -> usize {
        self.transposed.len()
    }

    pub fn output_dim(&self) -> usize {
        self.s
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    /// `W_k` (s×d).
    pub fn matrix(&self, k: usize) -> Tensor {
        self.transposed[k].transpose()
    }
}

/// Activation applied to projected features in the randomized kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// A kernel prepared for a fixed feature width.
#[derive(Debug, Clone, PartialEq)]
pub enum Nhk {
    Gauss {
        t: f64,
    },
    Sigmoid {
        a: f64,
        b: f64,
    },
    Randomized {
        projections: RandomProjections,
        weights: Vec<f64>,
    },
}

impl Nhk {
    /// Records the kernel matrix of `h` on the tape.
    pub fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self {
            Nhk::Gauss { t } => nhk_gauss(tape, h, *t),
            Nhk::Sigmoid { a, b } => Ok(nhk_sigmoid(tape, h, *a, *b)),
            Nhk::Randomized {
                projections,
                weights,
            } => nhk_randomized(tape, h, projections, weights),
        }
    }

    /// Kernel matrix of a constant feature matrix.
    pub fn eval(&self, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.detached());
        let k = self.apply(&mut tape, hv)?;
        Ok(tape.value(k).detached())
    }
}

/// Gauss-Weierstrass kernel `exp(−‖h_i − h_j‖² / 4T)`.
pub fn nhk_gauss(tape: &mut Tape, h: Var, t: f64) -> Result<Var> {
    if !(t > 0.0) {
        return Err(GkdError::invalid(
            "kernel.t",
            format!("{t} must be positive"),
        ));
    }
    let d = tape.pairwise_sqdist(h);
    let scaled = tape.scale(d, -1.0 / (4.0 * t));
    Ok(tape.exp(scaled))
}

/// Sigmoid kernel `tanh(a⟨h_i, h_j⟩ + b)`.
pub fn nhk_sigmoid(tape: &mut Tape, h: Var, a: f64, b: f64) -> Var {
    let g = tape.gram(h);
    let scaled = tape.scale(g, a);
    let shifted = tape.add_scalar(scaled, b);
    tape.tanh(shifted)
}

/// Randomized kernel with `tanh` features.
pub fn nhk_randomized(
    tape: &mut Tape,
    h: Var,
    proj: &RandomProjections,
    weights: &[f64],
) -> Result<Var> {
    nhk_randomized_with(tape, h, proj, weights, Activation::Tanh)
}

pub fn nhk_randomized_with(
    tape: &mut Tape,
    h: Var,
    proj: &RandomProjections,
    weights: &[f64],
    activation: Activation,
) -> Result<Var> {
    if tape.value(h).cols() != proj.d {
        return Err(GkdError::dim(
            "nhk_randomized",
            format!("{} feature columns", proj.d),
            tape.value(h).cols(),
        ));
    }
    if weights.len() != proj.m() {
        return Err(GkdError::dim(
            "nhk_randomized",
            format!("{} decay weights", proj.m()),
            weights.len(),
        ));
    }
    let m = proj.m() as f64;
    let mut total: Option<Var> = None;
    for (wt, &w) in proj.transposed.iter().zip(weights) {
        let wv = tape.constant(wt.detached());
        let z = tape.matmul(h, wv)?;
        let phi = match activation {
            Activation::Tanh => tape.tanh(z),
            Activation::Identity => z,
        };
        let g = tape.gram(phi);
        let term = tape.scale(g, w / m);
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("m >= 1"))
}

/// Cross-layer composition `K_a · diag(μ) · K_b`.
pub fn nhk_compose(k_a: &Tensor, k_b: &Tensor, mu: &Measure) -> Result<Tensor> {
    let n = k_a.rows();
    if k_a.shape() != (n, n) || k_b.shape() != (n, n) {
        return Err(GkdError::dim(
            "nhk_compose",
            format!("two {n}x{n} kernels"),
            format!("{:?} and {:?}", k_a.shape(), k_b.shape()),
        ));
    }
    if mu.len() != n {
        return Err(GkdError::dim(
            "nhk_compose",
            format!("measure of length {n}"),
            mu.len(),
        ));
    }
    let mut weighted = k_a.detached();
    for i in 0..n {
        for (j, &w) in mu.values.iter().enumerate() {
            weighted.set(i, j, weighted.get(i, j) * w);
        }
    }
    weighted.matmul(k_b)
}

/// Eigenpairs of a symmetric operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Tensor,
}

/// Full symmetric eigendecomposition of `l`.
pub fn symmetric_spectrum(l: &SparseMatrix) -> Result<Spectrum> {
    let n = l.rows();
    if l.cols() != n {
        return Err(GkdError::invalid("laplacian", "operator must be square"));
    }
    let asym = l.asymmetry();
    if asym > 1e-12 {
        return Err(GkdError::invalid(
            "laplacian",
            format!("operator is not symmetric (gap {asym:e})"),
        ));
    }
    let dense = l.to_dense();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, dense.data()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = Tensor::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

impl Spectrum {
    /// `Σ_{k<r} e^{−λ_k t} φ_k φ_kᵀ`.
    pub fn heat_kernel(&self, t: f64, r: usize) -> Tensor {
        let n = self.eigenvalues.len();
        let mut out = Tensor::zeros(n, n);
        for k in 0..r {
            let decay = (-self.eigenvalues[k] * t).exp();
            for i in 0..n {
                let vi = decay * self.eigenvectors.get(i, k);
                if vi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + vi * self.eigenvectors.get(j, k));
                }
            }
        }
        out
    }
}

/// `e^{−tL}` by full eigendecomposition.
pub fn exact_heat_kernel(l: &SparseMatrix, t: f64) -> Result<Tensor> {
    if !(t >= 0.0) {
        return Err(GkdError::invalid("t", format!("{t} must be >= 0")));
    }
    let spec = symmetric_spectrum(l)?;
    Ok(spec.heat_kernel(t, l.rows()))
}

/// Rank-`r` truncation of the heat-kernel eigen-expansion (smallest `r` eigenvalues).
pub fn heat_kernel_expansion(l: &SparseMatrix, t: f64, r: usize) -> Result<Tensor> {
    if r == 0 || r > l.rows() {
        return Err(GkdError::invalid(
            "r",
            format!("{r} outside [1, {}]", l.rows()),
        ));
    }
    if !(t >= 0.0) {
        return Err(GkdError::invalid("t", format!("{t} must be >= 0")));
    }
    Ok(symmetric_spectrum(l)?.heat_kernel(t, r))
}

/// Heat kernel of ℝ^k: `(4πt)^{−k/2} exp(−ρ² / 4t)`.
pub fn euclidean_heat_kernel(rho: f64, t: f64, k_dim: u32) -> Result<f64> {
    if !(t > 0.0) {
        return Err(GkdError::invalid("t", format!("{t} must be positive")));
    }
    if !(rho >= 0.0) {
        return Err(GkdError::invalid("rho", format!("{rho} must be >= 0")));
    }
    let norm = (4.0 * std::f64::consts::PI * t).powf(-(k_dim as f64) / 2.0);
    Ok(norm * (-rho * rho / (4.0 * t)).exp())
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn min_eigenvalue(k: &Tensor) -> f64 {
    let n = k.rows();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, k.data()));
    eig.eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
