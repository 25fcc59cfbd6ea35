//! Per-pass reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are copied
//! onto the tape (parameters persist outside it); [`Tape::backward`] walks the
//! record in reverse and writes gradients into every node that requires one.
//! Drop the tape once the gradients have been read.

use std::sync::Arc;

use crate::error::{GkdError, Result};

use super::dense::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    SelectRows(Var, Vec<usize>),
    PairwiseSqDist(Var),
    Gram(Var),
    FrobeniusSq {
        a: Var,
        b: Var,
        w_sq: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        mask: Vec<usize>,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SoftTargetKl {
        student: Var,
        mask: Vec<usize>,
        target: Vec<f64>,
        probs: Vec<f64>,
        tau: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records `t` as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    /// Copies a trainable parameter onto the tape.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut v = t.detached();
        v.requires_grad = true;
        self.push(v, Op::Leaf)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut v = t;
        v.requires_grad = false;
        v.grad = None;
        self.push(v, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].value.grad_tensor()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        value.requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        value.grad = None;
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push_derived(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let out = s.mul_dense(self.value(x))?;
        Ok(self.push_derived(out, Op::SpMM(Arc::clone(s), x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push_derived(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push_derived(out, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push_derived(out, Op::Exp(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push_derived(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push_derived(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        self.push_derived(out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push_derived(out, Op::AddScalar(x), &[x])
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push_derived(out, Op::Sum(x), &[x])
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if rows.is_empty() {
            return Err(GkdError::invalid("rows", "row selection must be nonempty"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(GkdError::invalid(
                "rows",
                format!("row {bad} out of {}", src.rows()),
            ));
        }
        let out = src.select_rows(rows);
        Ok(self.push_derived(out, Op::SelectRows(x, rows.to_vec()), &[x]))
    }

    /// `D_ij = ‖h_i − h_j‖²` over the rows of `h`.
    pub fn pairwise_sqdist(&mut self, h: Var) -> Var {
        let x = self.value(h);
        let n = x.rows();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            let ri = x.row(i);
            for j in (i + 1)..n {
                let dist: f64 = ri
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                out.set(i, j, dist);
                out.set(j, i, dist);
            }
        }
        self.push_derived(out, Op::PairwiseSqDist(h), &[h])
    }

    /// `H Hᵀ`.
    pub fn gram(&mut self, h: Var) -> Var {
        let x = self.value(h);
        let n = x.rows();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            let ri = x.row(i);
            for j in i..n {
                let dot: f64 = ri.iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
                out.set(i, j, dot);
                out.set(j, i, dot);
            }
        }
        self.push_derived(out, Op::Gram(h), &[h])
    }

    /// `Σ_ij W_ij² (A_ij − B_ij)²` with a constant weight matrix `w`.
    pub fn frobenius_sq(&mut self, a: Var, b: Var, w: &Tensor) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "frobenius_sq")?;
        va.check_same_shape(w, "frobenius_sq")?;
        let w_sq: Vec<f64> = w.data().iter().map(|x| x * x).collect();
        let total = va
            .data()
            .iter()
            .zip(vb.data())
            .zip(&w_sq)
            .map(|((x, y), ww)| ww * (x - y) * (x - y))
            .sum();
        Ok(self.push_derived(
            Tensor::scalar(total),
            Op::FrobeniusSq { a, b, w_sq },
            &[a, b],
        ))
    }

    /// Mean negative log-softmax at the true class over the masked rows.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(GkdError::invalid(
                "mask",
                "cross entropy over an empty mask is undefined",
            ));
        }
        let z = self.value(logits);
        let (n, c) = z.shape();
        let mut probs = Vec::with_capacity(mask.len() * c);
        let mut picked = Vec::with_capacity(mask.len());
        let mut total = 0.0;
        for &node in mask {
            if node >= n {
                return Err(GkdError::invalid("mask", format!("node {node} out of {n}")));
            }
            let label = labels[node];
            if label >= c {
                return Err(GkdError::invalid(
                    "labels",
                    format!("class {label} at node {node} outside [0, {c})"),
                ));
            }
            let (row_probs, log_norm) = softmax_row(z.row(node), 1.0);
            total += log_norm - z.get(node, label);
            probs.extend(row_probs);
            picked.push(label);
        }
        let out = Tensor::scalar(total / mask.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            mask: mask.to_vec(),
            labels: picked,
            probs,
        };
        Ok(self.push_derived(out, op, &[logits]))
    }

    /// `τ² · mean KL(target ‖ softmax(student/τ))` over masked rows, where
    /// `target` holds fixed probability rows (one per mask entry).
    pub fn soft_target_kl(
        &mut self,
        student: Var,
        target: &Tensor,
        tau: f64,
        mask: &[usize],
    ) -> Result<Var> {
        if mask.is_empty() {
            return Err(GkdError::invalid(
                "mask",
                "soft-label loss over an empty mask is undefined",
            ));
        }
        if !(tau > 0.0) {
            return Err(GkdError::invalid("tau_kd", "temperature must be positive"));
        }
        let z = self.value(student);
        let (n, c) = z.shape();
        if target.shape() != (mask.len(), c) {
            return Err(GkdError::dim(
                "soft_target_kl",
                format!("{}x{c} targets", mask.len()),
                format!("{}x{}", target.rows(), target.cols()),
            ));
        }
        let mut probs = Vec::with_capacity(mask.len() * c);
        let mut total = 0.0;
        for (k, &node) in mask.iter().enumerate() {
            if node >= n {
                return Err(GkdError::invalid("mask", format!("node {node} out of {n}")));
            }
            let (q, log_norm) = softmax_row(z.row(node), tau);
            for (j, &p) in target.row(k).iter().enumerate() {
                if p > 0.0 {
                    let log_q = z.get(node, j) / tau - log_norm;
                    total += p * (p.ln() - log_q);
                }
            }
            probs.extend(q);
        }
        let out = Tensor::scalar(tau * tau * total / mask.len() as f64);
        let op = Op::SoftTargetKl {
            student,
            mask: mask.to_vec(),
            target: target.data().to_vec(),
            probs,
            tau,
        };
        Ok(self.push_derived(out, op, &[student]))
    }

    /// Back-propagates from the scalar `loss`, populating `grad` on every
    /// node that requires one and is reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(GkdError::dim("backward", "1x1 loss", format!("{r}x{c}")));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.requires_grad(*a) {
                    matmul_bt_into(g, vb.data(), self.slot(grads, *a), m, n, k);
                }
                if self.requires_grad(*b) {
                    matmul_at_into(va.data(), g, self.slot(grads, *b), m, k, n);
                }
            }
            Op::SpMM(s, x) => {
                if self.requires_grad(*x) {
                    let d = out.cols();
                    s.mul_transpose_into(g, d, self.slot(grads, *x));
                }
            }
            Op::Relu(x) => {
                let input = self.value(*x).data();
                let slot = self.slot(grads, *x);
                for ((s, gi), xi) in slot.iter_mut().zip(g).zip(input) {
                    if *xi > 0.0 {
                        *s += gi;
                    }
                }
            }
            Op::Tanh(x) => {
                let slot = self.slot(grads, *x);
                for ((s, gi), y) in slot.iter_mut().zip(g).zip(out.data()) {
                    *s += gi * (1.0 - y * y);
                }
            }
            Op::Exp(x) => {
                let slot = self.slot(grads, *x);
                for ((s, gi), y) in slot.iter_mut().zip(g).zip(out.data()) {
                    *s += gi * y;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        axpy(self.slot(grads, v), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    axpy(self.slot(grads, *a), 1.0, g);
                }
                if self.requires_grad(*b) {
                    axpy(self.slot(grads, *b), -1.0, g);
                }
            }
            Op::Scale(x, c) => axpy(self.slot(grads, *x), *c, g),
            Op::AddScalar(x) => axpy(self.slot(grads, *x), 1.0, g),
            Op::Sum(x) => {
                let slot = self.slot(grads, *x);
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
            Op::SelectRows(x, rows) => {
                let d = out.cols();
                let slot = self.slot(grads, *x);
                for (k, &r) in rows.iter().enumerate() {
                    axpy(&mut slot[r * d..(r + 1) * d], 1.0, &g[k * d..(k + 1) * d]);
                }
            }
            Op::PairwiseSqDist(h) => {
                // dH = 2 (diag(rowsum S) H − S H), S = G + Gᵀ
                let x = self.value(*h);
                let (n, d) = x.shape();
                let mut sym = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        sym[i * n + j] = g[i * n + j] + g[j * n + i];
                    }
                }
                let slot = self.slot(grads, *h);
                let mut sh = vec![0.0; n * d];
                matmul_into(&sym, x.data(), &mut sh, n, n, d);
                for i in 0..n {
                    let rowsum: f64 = sym[i * n..(i + 1) * n].iter().sum();
                    for c in 0..d {
                        slot[i * d + c] += 2.0 * (rowsum * x.get(i, c) - sh[i * d + c]);
                    }
                }
            }
            Op::Gram(h) => {
                let x = self.value(*h);
                let (n, d) = x.shape();
                let mut sym = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        sym[i * n + j] = g[i * n + j] + g[j * n + i];
                    }
                }
                matmul_into(&sym, x.data(), self.slot(grads, *h), n, n, d);
            }
            Op::FrobeniusSq { a, b, w_sq } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let diff: Vec<f64> = va
                    .iter()
                    .zip(vb)
                    .zip(w_sq)
                    .map(|((x, y), ww)| 2.0 * g[0] * ww * (x - y))
                    .collect();
                if self.requires_grad(*a) {
                    axpy(self.slot(grads, *a), 1.0, &diff);
                }
                if self.requires_grad(*b) {
                    axpy(self.slot(grads, *b), -1.0, &diff);
                }
            }
            Op::CrossEntropy {
                logits,
                mask,
                labels,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / mask.len() as f64;
                let slot = self.slot(grads, *logits);
                for (k, (&node, &label)) in mask.iter().zip(labels).enumerate() {
                    for j in 0..c {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        slot[node * c + j] += scale * (probs[k * c + j] - onehot);
                    }
                }
            }
            Op::SoftTargetKl {
                student,
                mask,
                target,
                probs,
                tau,
            } => {
                let c = self.value(*student).cols();
                let scale = g[0] * tau / mask.len() as f64;
                let slot = self.slot(grads, *student);
                for (k, &node) in mask.iter().enumerate() {
                    for j in 0..c {
                        slot[node * c + j] += scale * (probs[k * c + j] - target[k * c + j]);
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let len = self.value(v).data().len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

fn axpy(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Softmax of `row / tau` and its log-normaliser (log-sum-exp of `row / tau`).
pub(crate) fn softmax_row(row: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / tau));
    let exps: Vec<f64> = row.iter().map(|&x| (x / tau - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / total).collect();
    (probs, max + total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_value() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t(&[&[1.0], &[1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let mut tape = Tape::new();
        let x = t(&[&[0.5, -1.0, 2.0], &[3.0, 0.0, 1.0]]);
        let i = tape.constant(Tensor::identity(2));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
        assert!(matches!(
            tape.matmul(xv, xv),
            Err(GkdError::Dimension { .. })
        ));
    }

    #[test]
    fn relu_and_tanh_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[-1.0, 2.0]]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let z = tape.constant(Tensor::zeros(1, 1));
        let th = tape.tanh(z);
        assert_eq!(tape.value(th).item(), 0.0);
    }

    #[test]
    fn relu_gradient_is_zero_at_kink() {
        let mut tape = Tape::new();
        let x = tape.param(&t(&[&[-1.0, 0.0, 2.0]]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 2));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.add(a, b).is_err());
        assert!(tape.sub(a, b).is_err());
        assert!(tape.frobenius_sq(a, a, &Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let mut confident = Tensor::zeros(2, 3);
        confident.set(0, 1, 1e6);
        confident.set(1, 2, 1e6);
        let z = tape.constant(confident);
        let loss = tape.cross_entropy(z, &[1, 2], &[0, 1]).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);

        let u = tape.constant(Tensor::filled(3, 4, 0.7));
        let loss = tape.cross_entropy(u, &[0, 3, 2], &[0, 1, 2]).unwrap();
        assert!((tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);

        assert!(tape.cross_entropy(u, &[0, 3, 2], &[]).is_err());
        assert!(tape.cross_entropy(u, &[0, 4, 2], &[1]).is_err());
    }

    #[test]
    fn frobenius_hand_value() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[&[0.1, 0.2], &[0.2, 0.3]]));
        let b = tape.constant(Tensor::zeros(2, 2));
        let l = tape.frobenius_sq(a, b, &Tensor::filled(2, 2, 1.0)).unwrap();
        assert!((tape.value(l).item() - 0.18).abs() < 1e-15);
        let l0 = tape.frobenius_sq(a, b, &Tensor::zeros(2, 2)).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
        let same = tape.frobenius_sq(a, a, &Tensor::filled(2, 2, 3.0)).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
    }

    #[test]
    fn pairwise_and_gram_small_cases() {
        let mut tape = Tape::new();
        let h = tape.constant(t(&[&[0.0], &[1.0]]));
        let d = tape.pairwise_sqdist(h);
        assert_eq!(tape.value(d).data(), &[0.0, 1.0, 1.0, 0.0]);
        let same = tape.constant(Tensor::filled(4, 3, 1.5));
        let d = tape.pairwise_sqdist(same);
        assert!(tape.value(d).data().iter().all(|&x| x == 0.0));

        let z = tape.constant(Tensor::zeros(3, 2));
        let g = tape.gram(z);
        assert!(tape.value(g).data().iter().all(|&x| x == 0.0));
        let s = 0.5f64.sqrt();
        let ortho = tape.constant(t(&[&[s, s], &[s, -s]]));
        let g = tape.gram(ortho);
        assert!(tape.value(g).max_abs_diff(&Tensor::identity(2)).unwrap() < 1e-15);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&t(&[&[1.0, 2.0]]));
        let c = tape.constant(t(&[&[3.0, 4.0]]));
        let d = tape.frobenius_sq(w, c, &Tensor::filled(1, 2, 1.0)).unwrap();
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[-4.0, -4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::zeros(2, 2));
        assert!(tape.backward(w).is_err());
    }
}
