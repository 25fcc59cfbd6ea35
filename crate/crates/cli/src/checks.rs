//! Self-checks run by `validate-kernels` and `gradcheck`.
//!
//! Kernel checks compare the eigendecomposition-based heat kernel against a
//! scaling-and-squaring Taylor evaluation of `e^{−tL}`, which shares no code
//! with it.

use std::sync::Arc;

use gkd_core::distill::{
    distill_loss, inverse_nhk_gram, kd_soft_label_loss, layer_avg_distill, reconstruction_loss,
    weight_matrix,
};
use gkd_core::graph::{sbm_generate, Graph, SbmParams};
use gkd_core::model::{sgc_euler_equivalence, GnnModel};
use gkd_core::nhk::{
    exact_heat_kernel, heat_kernel_expansion, min_eigenvalue, nhk_gauss, nhk_randomized,
    nhk_sigmoid, RandomProjections,
};
use gkd_core::tensor::{grad_check, SparseMatrix, Tape, Tensor, Var};
use gkd_core::Result;
use serde::Serialize;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    /// Largest deviation observed across all instances.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &str, max_deviation: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            max_deviation,
            tolerance,
            passed: max_deviation.is_finite() && max_deviation <= tolerance,
        }
    }

    /// `name  max_dev=…  tol=…  PASS|FAIL`.
    pub fn line(&self) -> String {
        format!(
            "{:<28} max_dev={:<12.3e} tol={:<8.1e} {}",
            self.name,
            self.max_deviation,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

/// Settings of the kernel oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheckOptions {
    pub graphs: usize,
    pub seed: u64,
    /// Adds `±skew` to one off-diagonal pair of the kernel under test.
    pub skew: Option<f64>,
}

impl Default for KernelCheckOptions {
    fn default() -> Self {
        KernelCheckOptions {
            graphs: 5,
            seed: 0,
            skew: None,
        }
    }
}

/// Seeded random 20-node graph with 8-dimensional features.
pub fn random_graph(seed: u64) -> Result<Graph> {
    sbm_generate(&SbmParams {
        blocks: vec![10, 10],
        p_in: 0.3,
        p_out: 0.05,
        feature_dim: 8,
        noise_sigma: 1.0,
        seed,
    })
}

/// `e^{A}` by scaling and squaring a 24-term Taylor series.
pub fn expm_taylor(a: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    while norm1 / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let scaled = a.scale(1.0 / 2f64.powi(squarings));
    let mut term = Tensor::identity(n);
    let mut sum = Tensor::identity(n);
    for k in 1..=24 {
        term = term.matmul(&scaled)?.scale(1.0 / k as f64);
        sum = sum.add(&term)?;
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// Heat-kernel theorem checks on `opts.graphs` seeded random graphs.
pub fn kernel_suite(opts: &KernelCheckOptions) -> Result<Vec<CheckReport>> {
    let (s, t) = (0.3, 0.7);
    let mut symmetric = 0f64;
    let mut psd = 0f64;
    let mut semigroup = 0f64;
    let mut expansion = 0f64;
    let mut monotone = 0f64;
    let mut euler = 0f64;
    for k in 0..opts.graphs {
        let g = random_graph(opts.seed.wrapping_add(k as u64))?;
        let lap = g.laplacian();
        let n = g.num_nodes();

        let mut kt = exact_heat_kernel(&lap, t)?;
        if let Some(eps) = opts.skew {
            kt.set(0, 1, kt.get(0, 1) + eps);
            kt.set(1, 0, kt.get(1, 0) - eps);
        }
        symmetric = symmetric.max(kt.asymmetry());
        psd = psd.max((-min_eigenvalue(&exact_heat_kernel(&lap, t)?)).max(0.0));

        let product = exact_heat_kernel(&lap, s)?.matmul(&exact_heat_kernel(&lap, t)?)?;
        semigroup = semigroup.max(
            product
                .sub(&exact_heat_kernel(&lap, s + t)?)?
                .frobenius_norm(),
        );

        let reference = expm_taylor(&lap.to_dense().scale(-t))?;
        let mut previous = f64::INFINITY;
        for r in 1..=n {
            let err = heat_kernel_expansion(&lap, t, r)?
                .sub(&reference)?
                .frobenius_norm();
            monotone = monotone.max(err - previous);
            previous = err;
            if r == n {
                expansion = expansion.max(err);
            }
        }

        for steps in 1..=4 {
            euler = euler.max(sgc_euler_equivalence(&g, g.features(), steps)?);
        }
    }
    Ok(vec![
        CheckReport::new("heat_kernel_symmetric", symmetric, 1e-10),
        CheckReport::new("heat_kernel_psd", psd, 1e-10),
        CheckReport::new("semigroup", semigroup, 1e-8),
        CheckReport::new("expansion_full_rank", expansion, 1e-8),
        CheckReport::new("expansion_monotone", monotone.max(0.0), 1e-12),
        CheckReport::new("sgc_euler", euler, 1e-12),
    ])
}

/// Relative-error threshold of the gradient suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Smooth deterministic test values in roughly `[-0.8, 0.8]`.
fn wave(rows: usize, cols: usize, salt: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |i, j| {
        0.8 * ((i * 7 + j * 13 + salt * 31) as f64 * 0.61 + 0.3).sin()
    })
}

/// Like [`wave`] but bounded away from zero, so `relu` has no kink nearby.
fn wave_off_zero(rows: usize, cols: usize, salt: usize) -> Tensor {
    wave(rows, cols, salt).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

/// Reduces a tensor to a scalar with nontrivial, uneven weights.
fn reduce(tape: &mut Tape, v: Var) -> Result<Var> {
    let (r, c) = tape.value(v).shape();
    let target = tape.constant(wave(r, c, 97));
    tape.frobenius_sq(v, target, &wave(r, c, 53).map(|x| x + 1.0))
}

fn small_graph() -> Result<Graph> {
    sbm_generate(&SbmParams {
        blocks: vec![4, 4],
        p_in: 0.6,
        p_out: 0.15,
        feature_dim: 3,
        noise_sigma: 0.5,
        seed: 11,
    })
}

fn small_gcn(g: &Graph) -> Result<GnnModel> {
    let mut m = GnnModel::gcn(vec![g.feature_dim(), 5, 4, g.num_classes()])?;
    m.init_xavier(5);
    Ok(m)
}

type Case = (&'static str, Result<f64>);

/// Analytic vs central-difference gradients of every differentiable
/// operation and of the full distillation objectives.
pub fn gradient_suite() -> Result<Vec<CheckReport>> {
    let g = small_graph()?;
    let adj: Arc<SparseMatrix> = g.normalized_adjacency();
    let labels = g.dense_labels();
    let train = g.masks().train.clone();
    let model = small_gcn(&g)?;
    let n = g.num_nodes();
    let all: Vec<usize> = (0..n).collect();
    let w_dis = weight_matrix(&g, 0.3, &all)?;

    // Constant teacher signals from an independently initialised teacher.
    let mut teacher = small_gcn(&g)?;
    teacher.init_xavier(77);
    let mut tape = Tape::new();
    let tp = teacher.forward(&mut tape, &g, false)?;
    let t_layers: Vec<Tensor> = tp.trace.iter().map(|&v| tape.value(v).detached()).collect();
    drop(tape);
    let t_kernels: Vec<Tensor> = (1..=3)
        .map(|l| gkd_core::nhk::Nhk::Gauss { t: 1.0 }.eval(&t_layers[l]))
        .collect::<Result<_>>()?;
    let phi = wave(4, 8, 5).scale(0.5);
    let t_dagger = {
        let mut tape = Tape::new();
        let h = tape.constant(t_layers[2].clone());
        let p = tape.constant(phi.clone());
        let k = inverse_nhk_gram(&mut tape, p, h)?;
        tape.value(k).detached()
    };
    let proj = RandomProjections::generate(3, 3, 4, 3);
    let kd_targets = t_layers[3].clone();

    let unary = |f: fn(&mut Tape, Var) -> Result<Var>, x: Tensor| {
        grad_check(&[x], move |tape, v| {
            let y = f(tape, v[0])?;
            reduce(tape, y)
        })
    };

    let cases: Vec<Case> = vec![
        (
            "matmul",
            grad_check(&[wave(3, 4, 1), wave(4, 2, 2)], |tape, v| {
                let y = tape.matmul(v[0], v[1])?;
                reduce(tape, y)
            }),
        ),
        (
            "spmm",
            grad_check(&[wave(n, 3, 3)], |tape, v| {
                let y = tape.spmm(&adj, v[0])?;
                reduce(tape, y)
            }),
        ),
        ("relu", unary(|t, x| Ok(t.relu(x)), wave_off_zero(4, 3, 4))),
        ("tanh", unary(|t, x| Ok(t.tanh(x)), wave(4, 3, 5))),
        ("exp", unary(|t, x| Ok(t.exp(x)), wave(4, 3, 6))),
        ("scale", unary(|t, x| Ok(t.scale(x, -1.7)), wave(4, 3, 7))),
        (
            "add_scalar",
            unary(|t, x| Ok(t.add_scalar(x, 0.4)), wave(4, 3, 8)),
        ),
        ("sum", unary(|t, x| Ok(t.sum(x)), wave(4, 3, 9))),
        (
            "select_rows",
            unary(|t, x| t.select_rows(x, &[2, 0, 2]), wave(4, 3, 10)),
        ),
        (
            "pairwise_sqdist",
            unary(|t, x| Ok(t.pairwise_sqdist(x)), wave(5, 3, 11)),
        ),
        ("gram", unary(|t, x| Ok(t.gram(x)), wave(5, 3, 12))),
        (
            "add",
            grad_check(&[wave(3, 3, 13), wave(3, 3, 14)], |tape, v| {
                let y = tape.add(v[0], v[1])?;
                reduce(tape, y)
            }),
        ),
        (
            "sub",
            grad_check(&[wave(3, 3, 15), wave(3, 3, 16)], |tape, v| {
                let y = tape.sub(v[0], v[1])?;
                reduce(tape, y)
            }),
        ),
        (
            "frobenius_sq",
            grad_check(&[wave(3, 3, 17), wave(3, 3, 18)], |tape, v| {
                tape.frobenius_sq(v[0], v[1], &wave(3, 3, 19))
            }),
        ),
        (
            "cross_entropy",
            grad_check(&[wave(n, g.num_classes(), 20).scale(3.0)], |tape, v| {
                tape.cross_entropy(v[0], &labels, &train)
            }),
        ),
        (
            "soft_target_kl",
            grad_check(&[wave(n, g.num_classes(), 21).scale(3.0)], |tape, v| {
                kd_soft_label_loss(tape, &kd_targets, v[0], 1.5, &train)
            }),
        ),
        (
            "nhk_gauss",
            unary(|t, x| nhk_gauss(t, x, 0.75), wave(5, 3, 22)),
        ),
        (
            "nhk_sigmoid",
            unary(|t, x| Ok(nhk_sigmoid(t, x, 0.7, 0.1)), wave(5, 3, 23)),
        ),
        (
            "nhk_randomized",
            grad_check(&[wave(5, 3, 24)], |tape, v| {
                let k = nhk_randomized(tape, v[0], &proj, &[1.0, 0.6, 0.3])?;
                reduce(tape, k)
            }),
        ),
        (
            "gcn_cross_entropy",
            grad_check(model.weights(), |tape, v| {
                let pass = model.forward_with(tape, &g, v.to_vec())?;
                tape.cross_entropy(pass.logits, &labels, &train)
            }),
        ),
        (
            "gkd_objective",
            grad_check(model.weights(), |tape, v| {
                let pass = model.forward_with(tape, &g, v.to_vec())?;
                let pre = tape.cross_entropy(pass.logits, &labels, &train)?;
                let kernels = vec![gkd_core::nhk::Nhk::Gauss { t: 1.0 }; 3];
                let dis =
                    layer_avg_distill(tape, &t_kernels, &pass.trace[1..], &kernels, 0.5, &w_dis)?;
                tape.add(pre, dis)
            }),
        ),
        (
            "gkd_minibatch_objective",
            grad_check(model.weights(), |tape, v| {
                let pass = model.forward_with(tape, &g, v.to_vec())?;
                let nodes = [1, 3, 4, 6];
                let w = weight_matrix(&g, 0.3, &nodes)?;
                let kt =
                    gkd_core::nhk::Nhk::Gauss { t: 1.0 }.eval(&t_layers[2].select_rows(&nodes))?;
                let h = tape.select_rows(pass.trace[2], &nodes)?;
                let ks = nhk_gauss(tape, h, 1.0)?;
                distill_loss(tape, &kt, ks, &w)
            }),
        ),
        (
            "pgkd_student_objective",
            grad_check(model.weights(), |tape, v| {
                let pass = model.forward_with(tape, &g, v.to_vec())?;
                let pre = tape.cross_entropy(pass.logits, &labels, &train)?;
                let p = tape.constant(phi.clone());
                let ks = inverse_nhk_gram(tape, p, pass.trace[2])?;
                let dis = distill_loss(tape, &t_dagger, ks, &w_dis)?;
                let dis = tape.scale(dis, 0.05);
                tape.add(pre, dis)
            }),
        ),
        (
            "pgkd_mapper_objective",
            grad_check(&[phi.clone()], |tape, v| {
                let mut total = None;
                let student_late = t_layers[2].map(f64::tanh);
                for (early, late) in [
                    (wave(n, 4, 40), &t_layers[2]),
                    (wave(n, 4, 41), &student_late),
                ] {
                    let (e, l) = (tape.constant(early), tape.constant(late.clone()));
                    let k = inverse_nhk_gram(tape, v[0], l)?;
                    let rec = reconstruction_loss(tape, k, l, e)?;
                    total = Some(match total {
                        Some(acc) => tape.add(acc, rec)?,
                        None => rec,
                    });
                }
                Ok(total.unwrap())
            }),
        ),
        (
            "kd_through_gcn",
            grad_check(model.weights(), |tape, v| {
                let pass = model.forward_with(tape, &g, v.to_vec())?;
                kd_soft_label_loss(tape, &kd_targets, pass.logits, 2.0, &train)
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, err)| Ok(CheckReport::new(name, err?, GRAD_TOLERANCE)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let a = Tensor::from_rows(&[vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let e = expm_taylor(&a).unwrap();
        assert!((e.get(0, 0) - (-1f64).exp()).abs() < 1e-14);
        assert!((e.get(1, 1) - 2f64.exp()).abs() < 1e-13);
        assert_eq!(e.get(0, 1), 0.0);
    }

    #[test]
    fn expm_of_nilpotent() {
        let a = Tensor::from_rows(&[vec![0.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let e = expm_taylor(&a).unwrap();
        assert!((e.get(0, 1) - 3.0).abs() < 1e-14);
        assert!((e.get(0, 0) - 1.0).abs() < 1e-15);
    }
}
