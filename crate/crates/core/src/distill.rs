//! Geometric distillation losses.
//!
//! Non-parametric distillation aligns per-layer kernel matrices of teacher
//! and student under a connectivity weighting `W` (1 on the student's edges,
//! `δ` elsewhere). Parametric distillation learns an inverse kernel
//! `K† = g(H) g(H)ᵀ`, `g(h) = tanh(h Φ)`, fitted by reconstructing early-layer
//! features from late-layer ones, and aligns the teacher's and student's `K†`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::graph::Graph;
use crate::nhk::Nhk;
use crate::tensor::{softmax_row, Tape, Tensor, Var};

/// Loss weighting and schedule of the distillation term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the geometric distillation term.
    pub alpha: f64,
    /// Weight of node pairs that are not student edges.
    pub delta: f64,
    /// Student layers distilled: `k, 2k, …` up to the depth.
    pub layer_span: usize,
    /// Teacher layer stride when the teacher is deeper; defaults to `layer_span`.
    pub teacher_layer_span: Option<usize>,
    /// Weight of the soft-label term; the supervised term gets `1 − alpha_kd`.
    pub alpha_kd: f64,
    pub tau_kd: f64,
    /// Distil over a random node subset of this size each epoch.
    pub batch_size: Option<usize>,
    /// Mapper updates per epoch in parametric distillation.
    pub mapper_steps: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 1.0,
            delta: 0.1,
            layer_span: 1,
            teacher_layer_span: None,
            alpha_kd: 0.0,
            tau_kd: 1.0,
            batch_size: None,
            mapper_steps: 1,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(GkdError::invalid(field, why))
            }
        };
        check(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            "distill.alpha",
            "must be finite and >= 0",
        )?;
        check(
            self.delta >= 0.0 && self.delta.is_finite(),
            "distill.delta",
            "must be finite and >= 0",
        )?;
        check(self.layer_span >= 1, "distill.layer_span", "must be >= 1")?;
        check(
            self.teacher_layer_span != Some(0),
            "distill.teacher_layer_span",
            "must be >= 1",
        )?;
        check(
            (0.0..1.0).contains(&self.alpha_kd),
            "distill.alpha_kd",
            "must lie in [0, 1)",
        )?;
        check(
            self.tau_kd > 0.0 && self.tau_kd.is_finite(),
            "distill.tau_kd",
            "must be positive",
        )?;
        check(
            self.batch_size != Some(0),
            "distill.batch_size",
            "must be >= 1",
        )?;
        check(
            self.mapper_steps >= 1,
            "distill.mapper_steps",
            "must be >= 1",
        )?;
        Ok(())
    }

    /// Paired (teacher, student) trace indices to distil, given both depths.
    pub fn layer_pairs(
        &self,
        teacher_layers: usize,
        student_layers: usize,
    ) -> Result<Vec<(usize, usize)>> {
        let ks = self.layer_span;
        let kt = self.teacher_layer_span.unwrap_or(ks);
        let student: Vec<usize> = (1..)
            .map(|i| i * ks)
            .take_while(|&l| l <= student_layers)
            .collect();
        let teacher: Vec<usize> = (1..)
            .map(|i| i * kt)
            .take_while(|&l| l <= teacher_layers)
            .collect();
        if student.len() != teacher.len() || student.is_empty() {
            return Err(GkdError::invalid(
                "distill.layer_span",
                format!(
                    "teacher depth {teacher_layers} (span {kt}) and student depth {student_layers} (span {ks}) \
                     give {} vs {} distilled layers",
                    teacher.len(),
                    student.len()
                ),
            ));
        }
        Ok(teacher.into_iter().zip(student).collect())
    }
}

/// `W_ij = 1` when `(subset[i], subset[j])` is an edge of `g`, `δ` otherwise
/// (diagonal included: self-loops are not stored edges).
pub fn weight_matrix(g: &Graph, delta: f64, subset: &[usize]) -> Result<Tensor> {
    if let Some(&bad) = subset.iter().find(|&&v| v >= g.num_nodes()) {
        return Err(GkdError::invalid(
            "subset",
            format!("node {bad} out of {}", g.num_nodes()),
        ));
    }
    if subset.is_empty() {
        return Err(GkdError::invalid("subset", "must be nonempty"));
    }
    let mut position = vec![None; g.num_nodes()];
    for (i, &v) in subset.iter().enumerate() {
        position[v] = Some(i);
    }
    let mut w = Tensor::filled(subset.len(), subset.len(), delta);
    for &(u, v) in g.edges() {
        if let (Some(i), Some(j)) = (position[u], position[v]) {
            w.set(i, j, 1.0);
            w.set(j, i, 1.0);
        }
    }
    Ok(w)
}

/// Rescales a batch weighting so the batch loss is an unbiased estimate of
/// the full-graph loss when the `b` batch nodes are a uniform draw from `n`:
/// off-diagonal pairs are seen with probability `b(b−1)/n(n−1)`, diagonal
/// ones with `b/n`. Entries are weights, so factors enter as square roots.
pub fn unbias_batch_weights(w: &mut Tensor, n: usize, b: usize) {
    let diag = (n as f64 / b as f64).sqrt();
    let off = if b > 1 {
        ((n * (n - 1)) as f64 / (b * (b - 1)) as f64).sqrt()
    } else {
        0.0
    };
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let f = if i == j { diag } else { off };
            w.set(i, j, w.get(i, j) * f);
        }
    }
}

/// `‖(K_teacher − K_student) ⊙ W‖²_F`; the teacher kernel enters as a constant.
pub fn distill_loss(
    tape: &mut Tape,
    k_teacher: &Tensor,
    k_student: Var,
    w: &Tensor,
) -> Result<Var> {
    let ks = tape.value(k_student);
    if ks.rows() != ks.cols() || ks.shape() != k_teacher.shape() {
        return Err(GkdError::dim(
            "distill_loss",
            format!("{:?} square kernels", k_teacher.shape()),
            format!("{:?}", ks.shape()),
        ));
    }
    let teacher = tape.constant(k_teacher.detached());
    tape.frobenius_sq(k_student, teacher, w)
}

/// `(α / L) Σ_l ‖(K_teacher^(l) − K_student^(l)) ⊙ W‖²_F`.
///
/// `teacher_kernels[l]` are constant teacher kernels already restricted to
/// the student's nodes; `student_features[l]` are the matching student layer
/// features and `kernels[l]` the kernel applied to them.
pub fn layer_avg_distill(
    tape: &mut Tape,
    teacher_kernels: &[Tensor],
    student_features: &[Var],
    kernels: &[Nhk],
    alpha: f64,
    w: &Tensor,
) -> Result<Var> {
    let layers = student_features.len();
    if teacher_kernels.len() != layers || kernels.len() != layers || layers == 0 {
        return Err(GkdError::dim(
            "layer_avg_distill",
            format!("{layers} teacher kernels and kernel specs"),
            format!("{} and {}", teacher_kernels.len(), kernels.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for ((kt, &h), nhk) in teacher_kernels.iter().zip(student_features).zip(kernels) {
        let ks = nhk.apply(tape, h)?;
        let term = distill_loss(tape, kt, ks, w)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(tape.scale(total.unwrap(), alpha / layers as f64))
}

/// One-layer `tanh` feature map `g(h) = tanh(h Φ)`, `Φ ∈ ℝ^{d×s}`, defining
/// the inverse kernel `K† = g(H) g(H)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseNhkMapper {
    pub weight: Tensor,
}

impl InverseNhkMapper {
    /// Xavier-uniform initialised `d × s` mapper.
    pub fn new(d: usize, s: usize, seed: u64) -> Self {
        let bound = (6.0 / (d + s) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::from_fn(d, s, |_, _| rng.random_range(-bound..bound));
        InverseNhkMapper { weight }
    }

    /// Mapper with the default output width `s = 2d`.
    pub fn with_default_width(d: usize, seed: u64) -> Self {
        Self::new(d, 2 * d, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// `K† = tanh(H Φ) tanh(H Φ)ᵀ` with `Φ` given as a tape value.
pub fn inverse_nhk_gram(tape: &mut Tape, mapper_weight: Var, h_late: Var) -> Result<Var> {
    let (h_cols, w_rows) = (tape.value(h_late).cols(), tape.value(mapper_weight).rows());
    if h_cols != w_rows {
        return Err(GkdError::dim(
            "inverse_nhk_gram",
            format!("{w_rows} feature columns"),
            h_cols,
        ));
    }
    let z = tape.matmul(h_late, mapper_weight)?;
    let phi = tape.tanh(z);
    Ok(tape.gram(phi))
}

/// `‖K† H_late − H_early‖²_F`.
pub fn reconstruction_loss(
    tape: &mut Tape,
    k_dagger: Var,
    h_late: Var,
    h_early: Var,
) -> Result<Var> {
    let (kd, late, early) = (
        tape.value(k_dagger),
        tape.value(h_late),
        tape.value(h_early),
    );
    if kd.rows() != kd.cols() || kd.cols() != late.rows() || late.shape() != early.shape() {
        return Err(GkdError::dim(
            "reconstruction_loss",
            "n×n kernel with equal-shape n×d features",
            format!("{:?}, {:?}, {:?}", kd.shape(), late.shape(), early.shape()),
        ));
    }
    let ones = Tensor::filled(early.rows(), early.cols(), 1.0);
    let rebuilt = tape.matmul(k_dagger, h_late)?;
    tape.frobenius_sq(rebuilt, h_early, &ones)
}

/// Temperature-softened teacher probabilities for the rows in `mask`.
pub fn soft_targets(teacher_logits: &Tensor, tau: f64, mask: &[usize]) -> Tensor {
    let c = teacher_logits.cols();
    let mut out = Tensor::zeros(mask.len().max(1), c);
    for (k, &i) in mask.iter().enumerate() {
        let (p, _) = softmax_row(teacher_logits.row(i), tau);
        for (j, pj) in p.into_iter().enumerate() {
            out.set(k, j, pj);
        }
    }
    out
}

/// `τ² · mean_i KL(softmax(t_i/τ) ‖ softmax(s_i/τ))` over `mask`; the teacher
/// logits (rows aligned with the student's nodes) are constants.
pub fn kd_soft_label_loss(
    tape: &mut Tape,
    teacher_logits: &Tensor,
    student_logits: Var,
    tau: f64,
    mask: &[usize],
) -> Result<Var> {
    let student = tape.value(student_logits);
    if student.shape() != teacher_logits.shape() {
        return Err(GkdError::dim(
            "kd_soft_label_loss",
            format!("{:?}", student.shape()),
            format!("{:?}", teacher_logits.shape()),
        ));
    }
    if mask.is_empty() {
        return Err(GkdError::invalid(
            "mask",
            "soft-label loss over an empty mask is undefined",
        ));
    }
    if !(tau > 0.0) {
        return Err(GkdError::invalid("tau_kd", "temperature must be positive"));
    }
    let targets = soft_targets(teacher_logits, tau, mask);
    tape.soft_target_kl(student_logits, &targets, tau, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Masks;

    fn two_node() -> Graph {
        Graph::new(
            2,
            vec![(0, 1)],
            Tensor::zeros(2, 1),
            vec![None, None],
            Masks::default(),
        )
        .unwrap()
    }

    #[test]
    fn weight_matrix_cases() {
        let g = two_node();
        assert_eq!(
            weight_matrix(&g, 0.5, &[0, 1]).unwrap().data(),
            &[0.5, 1.0, 1.0, 0.5]
        );
        assert!(weight_matrix(&g, 1.0, &[0, 1])
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 1.0));
        let edgeless = Graph::new(
            3,
            vec![],
            Tensor::zeros(3, 1),
            vec![None; 3],
            Masks::default(),
        )
        .unwrap();
        assert!(weight_matrix(&edgeless, 0.0, &[0, 1, 2])
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert!(weight_matrix(&g, 0.5, &[2]).is_err());
    }

    #[test]
    fn distill_loss_hand_value() {
        let g = two_node();
        let w = weight_matrix(&g, 0.0, &[0, 1]).unwrap();
        let diff = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.2, 0.3]]).unwrap();
        let mut tape = Tape::new();
        let ks = tape.constant(Tensor::zeros(2, 2));
        let loss = distill_loss(&mut tape, &diff, ks, &w).unwrap();
        assert!((tape.value(loss).item() - 0.08).abs() < 1e-15);

        let full = distill_loss(
            &mut tape,
            &diff,
            ks,
            &weight_matrix(&g, 1.0, &[0, 1]).unwrap(),
        )
        .unwrap();
        assert!(tape.value(full).item() >= tape.value(loss).item());

        let same = tape.constant(diff.clone());
        let zero = distill_loss(&mut tape, &diff, same, &w).unwrap();
        assert_eq!(tape.value(zero).item(), 0.0);
    }

    #[test]
    fn distill_loss_shape_mismatch() {
        let mut tape = Tape::new();
        let ks = tape.constant(Tensor::zeros(3, 3));
        assert!(distill_loss(&mut tape, &Tensor::zeros(2, 2), ks, &Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn teacher_kernel_gets_no_gradient() {
        let mut tape = Tape::new();
        let ks = tape.param(&Tensor::filled(2, 2, 0.5));
        let loss = distill_loss(
            &mut tape,
            &Tensor::identity(2),
            ks,
            &Tensor::filled(2, 2, 1.0),
        )
        .unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(ks).unwrap();
        assert_eq!(g.data(), &[-1.0, 1.0, 1.0, -1.0]);
        let teacher = Var(loss.0 - 1);
        assert!(!tape.requires_grad(teacher));
    }

    #[test]
    fn layer_pairs_follow_spans() {
        let cfg = DistillConfig::default();
        assert_eq!(cfg.layer_pairs(3, 3).unwrap(), vec![(1, 1), (2, 2), (3, 3)]);
        assert!(cfg.layer_pairs(4, 3).is_err());
        let deeper = DistillConfig {
            teacher_layer_span: Some(2),
            ..DistillConfig::default()
        };
        assert_eq!(
            deeper.layer_pairs(6, 3).unwrap(),
            vec![(2, 1), (4, 2), (6, 3)]
        );
    }

    #[test]
    fn inverse_gram_zero_mapper() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::zeros(3, 6));
        let h = tape.constant(Tensor::from_fn(4, 3, |i, j| (i + j) as f64));
        let k = inverse_nhk_gram(&mut tape, w, h).unwrap();
        assert!(tape.value(k).data().iter().all(|&x| x == 0.0));
        let bad = tape.constant(Tensor::zeros(2, 6));
        assert!(inverse_nhk_gram(&mut tape, bad, h).is_err());
    }

    #[test]
    fn reconstruction_scalar_case() {
        for (c, expected) in [(0.5, 0.0), (1.0, 1.0), (0.0, 1.0), (0.25, 0.25)] {
            let mut tape = Tape::new();
            let k = tape.constant(Tensor::scalar(c));
            let late = tape.constant(Tensor::scalar(2.0));
            let early = tape.constant(Tensor::scalar(1.0));
            let loss = reconstruction_loss(&mut tape, k, late, early).unwrap();
            assert!((tape.value(loss).item() - expected).abs() < 1e-15);
        }
        let mut tape = Tape::new();
        let k = tape.constant(Tensor::identity(2));
        let late = tape.constant(Tensor::zeros(2, 3));
        let early = tape.constant(Tensor::zeros(2, 2));
        assert!(reconstruction_loss(&mut tape, k, late, early).is_err());
    }

    #[test]
    fn kd_loss_reference_value() {
        let teacher = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
        let loss = kd_soft_label_loss(&mut tape, &teacher, s, 1.0, &[0]).unwrap();
        // KL(p‖q) with p = softmax([1,0]), q = softmax([0,1]) evaluated directly.
        let e = std::f64::consts::E;
        let p = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let q = [p[1], p[0]];
        let kl: f64 = p.iter().zip(q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
        assert!((tape.value(loss).item() - kl).abs() < 1e-14);

        let same = tape.constant(teacher.clone());
        let zero = kd_soft_label_loss(&mut tape, &teacher, same, 2.0, &[0]).unwrap();
        assert!(tape.value(zero).item().abs() < 1e-15);
        assert!(kd_soft_label_loss(&mut tape, &teacher, same, 1.0, &[]).is_err());
    }

    #[test]
    fn unbiased_batch_weights_scale() {
        let mut w = Tensor::filled(2, 2, 1.0);
        unbias_batch_weights(&mut w, 4, 2);
        assert!((w.get(0, 0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((w.get(0, 1) - 6f64.sqrt()).abs() < 1e-15);
    }
}
