//! Reference-value checks: library routines against independent
//! computations built in the test itself.

mod common;

use approx::assert_abs_diff_eq;
use common::*;
use gkd_core::distill::{
    distill_loss, inverse_nhk_gram, kd_soft_label_loss, layer_avg_distill, unbias_batch_weights,
    weight_matrix,
};
use gkd_core::graph::{normalize_adjacency, sbm_generate, Measure, SbmParams};
use gkd_core::model::{masked_cross_entropy, sgc_euler_equivalence, GnnModel};
use gkd_core::nhk::{
    euclidean_heat_kernel, exact_heat_kernel, heat_kernel_expansion, min_eigenvalue, nhk_compose,
    Nhk, RandomProjections,
};
use gkd_core::tensor::{Tape, Tensor};
use gkd_core::train::{sample_distill_batch, Adam, AdamConfig};

#[test]
fn dense_matmul_hand_value() {
    let a = Tensor::from_rows(&dense(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
    let b = Tensor::from_rows(&dense(&[&[1.0], &[1.0]])).unwrap();
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a), tape.constant(b));
    let c = tape.matmul(av, bv).unwrap();
    assert_eq!(to_rows(tape.value(c)), dense(&[&[3.0], &[7.0]]));
}

#[test]
fn spmm_matches_densified_product() {
    let g = random_graph(5, 0.5, 3, 11);
    let adj = g.normalized_adjacency();
    let x = random_matrix(5, 3, 12);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.spmm(&adj, xv).unwrap();
    let oracle = matmul(&normalized_adjacency_dense(&g), &to_rows(&x));
    assert!(max_abs_gap(&to_rows(tape.value(y)), &oracle) < 1e-14);
}

#[test]
fn uniform_logits_give_log_class_count() {
    for c in [2usize, 3, 7] {
        let logits = Tensor::filled(4, c, 0.3);
        let labels = vec![Some(0); 4];
        let loss = masked_cross_entropy(&logits, &labels, &[0, 1, 2, 3]);
        assert_abs_diff_eq!(loss, (c as f64).ln(), epsilon = 1e-12);
    }
}

#[test]
fn pairwise_distances_follow_gram_identity() {
    let h = random_matrix(6, 4, 3);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let d = tape.pairwise_sqdist(hv);
    let d = tape.value(d).clone();
    let hr = to_rows(&h);
    let ht: Vec<Vec<f64>> = (0..4).map(|j| hr.iter().map(|r| r[j]).collect()).collect();
    let gram = matmul(&hr, &ht);
    for i in 0..6 {
        for j in 0..6 {
            let expect = gram[i][i] + gram[j][j] - 2.0 * gram[i][j];
            assert_abs_diff_eq!(d.get(i, j), expect, epsilon = 1e-12);
        }
    }
}

#[test]
fn gram_is_psd_on_random_input() {
    let h = random_matrix(8, 3, 4);
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let g = tape.gram(hv);
    assert!(min_eigenvalue(tape.value(g)) >= -1e-10);
}

#[test]
fn normalized_adjacency_matches_dense_construction() {
    for seed in 0..4 {
        let g = random_graph(9, 0.3, 2, seed);
        let sparse = normalize_adjacency(&g).to_dense();
        assert!(max_abs_gap(&to_rows(&sparse), &normalized_adjacency_dense(&g)) < 1e-15);
        let lap = g.laplacian().to_dense();
        assert!(max_abs_gap(&to_rows(&lap), &laplacian_dense(&g)) < 1e-15);
    }
}

#[test]
fn sgc_matches_powers_of_dense_adjacency() {
    let g = random_graph(7, 0.4, 3, 21);
    let mut model = GnnModel::sgc(3, 2, 2).unwrap();
    model.init_xavier(5);
    let logits = model.predict(&g).unwrap();
    let a = normalized_adjacency_dense(&g);
    let propagated = matmul(&a, &matmul(&a, &to_rows(g.features())));
    let oracle = matmul(&propagated, &to_rows(&model.weights()[0]));
    assert!(max_abs_gap(&to_rows(&logits), &oracle) < 1e-12);
}

#[test]
fn euler_trajectory_matches_adjacency_powers() {
    let g = random_graph(10, 0.3, 4, 8);
    let x0 = random_matrix(10, 4, 9);
    assert!(sgc_euler_equivalence(&g, &x0, 3).unwrap() < 1e-12);

    let l = laplacian_dense(&g);
    let mut euler = to_rows(&x0);
    for _ in 0..3 {
        let lx = matmul(&l, &euler);
        for (row, lrow) in euler.iter_mut().zip(&lx) {
            for (x, d) in row.iter_mut().zip(lrow) {
                *x -= d;
            }
        }
    }
    let a = normalized_adjacency_dense(&g);
    let powered = matmul(&a, &matmul(&a, &matmul(&a, &to_rows(&x0))));
    assert!(max_abs_gap(&euler, &powered) < 1e-12);
}

#[test]
fn gauss_kernel_matches_formula() {
    let h = Tensor::from_rows(&dense(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap();
    let k = Nhk::Gauss { t: 0.25 }.eval(&h).unwrap();
    assert_abs_diff_eq!(k.get(0, 1), (-1.0f64).exp(), epsilon = 1e-12);
    assert_abs_diff_eq!(k.get(0, 1), 0.367879, epsilon = 1e-6);

    let h = random_matrix(5, 3, 1);
    let t = 0.7;
    let k = Nhk::Gauss { t }.eval(&h).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let d2: f64 = h
                .row(i)
                .iter()
                .zip(h.row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert_abs_diff_eq!(k.get(i, j), (-d2 / (4.0 * t)).exp(), epsilon = 1e-14);
        }
    }
}

#[test]
fn sigmoid_kernel_matches_formula() {
    let h = Tensor::from_rows(&dense(&[&[0.6, 0.8], &[0.6, 0.8]])).unwrap();
    let k = Nhk::Sigmoid { a: 1.0, b: 0.0 }.eval(&h).unwrap();
    assert_abs_diff_eq!(k.get(0, 1), 1.0f64.tanh(), epsilon = 1e-12);
    assert_abs_diff_eq!(k.get(0, 1), 0.761594, epsilon = 1e-6);

    let h = random_matrix(4, 3, 2);
    let (a, b) = (0.8, -0.3);
    let k = Nhk::Sigmoid { a, b }.eval(&h).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let dot: f64 = h.row(i).iter().zip(h.row(j)).map(|(x, y)| x * y).sum();
            assert_abs_diff_eq!(k.get(i, j), (a * dot + b).tanh(), epsilon = 1e-14);
        }
    }
}

#[test]
fn randomized_kernel_matches_explicit_sum() {
    let (n, d, s, m) = (5, 3, 4, 3);
    let h = random_matrix(n, d, 6);
    let ws: Vec<Tensor> = (0..m)
        .map(|k| random_matrix(s, d, 100 + k as u64))
        .collect();
    let weights = [1.0, 0.6, 0.2];
    let k = Nhk::Randomized {
        projections: RandomProjections::from_matrices(&ws).unwrap(),
        weights: weights.to_vec(),
    }
    .eval(&h)
    .unwrap();
    for i in 0..n {
        for j in 0..n {
            let mut expect = 0.0;
            for (w, wk) in ws.iter().zip(weights) {
                let fi: Vec<f64> = (0..s)
                    .map(|r| {
                        (0..d)
                            .map(|c| w.get(r, c) * h.get(i, c))
                            .sum::<f64>()
                            .tanh()
                    })
                    .collect();
                let fj: Vec<f64> = (0..s)
                    .map(|r| {
                        (0..d)
                            .map(|c| w.get(r, c) * h.get(j, c))
                            .sum::<f64>()
                            .tanh()
                    })
                    .collect();
                expect += wk * fi.iter().zip(&fj).map(|(a, b)| a * b).sum::<f64>();
            }
            assert_abs_diff_eq!(k.get(i, j), expect / m as f64, epsilon = 1e-13);
        }
    }
}

#[test]
fn composing_half_time_heat_kernels_gives_full_time() {
    let g = random_graph(12, 0.3, 2, 31);
    let lap = g.laplacian();
    let half = exact_heat_kernel(&lap, 0.5).unwrap();
    let composed = nhk_compose(&half, &half, &Measure::uniform(12)).unwrap();
    let oracle = heat_kernel_oracle(&g, 1.0);
    assert!(max_abs_gap(&to_rows(&composed), &oracle) < 1e-8);
}

#[test]
fn semigroup_on_twenty_nodes() {
    let g = random_graph(20, 0.2, 2, 32);
    let lap = g.laplacian();
    let half = to_rows(&exact_heat_kernel(&lap, 0.5).unwrap());
    let full = to_rows(&exact_heat_kernel(&lap, 1.0).unwrap());
    assert!(frobenius_gap(&matmul(&half, &half), &full) < 1e-8);
}

#[test]
fn composition_is_associative() {
    let mu = Measure {
        values: vec![0.5, 1.0, 2.0, 0.25],
        ..Measure::uniform(4)
    };
    let (a, b, c) = (
        random_matrix(4, 4, 1),
        random_matrix(4, 4, 2),
        random_matrix(4, 4, 3),
    );
    let left = nhk_compose(&nhk_compose(&a, &b, &mu).unwrap(), &c, &mu).unwrap();
    let right = nhk_compose(&a, &nhk_compose(&b, &c, &mu).unwrap(), &mu).unwrap();
    assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
}

#[test]
fn full_rank_expansion_matches_taylor_oracle() {
    let g = random_graph(15, 0.25, 2, 41);
    let lap = g.laplacian();
    for t in [0.3, 1.0, 2.5] {
        let k = heat_kernel_expansion(&lap, t, 15).unwrap();
        assert!(max_abs_gap(&to_rows(&k), &heat_kernel_oracle(&g, t)) < 1e-8);
    }
}

#[test]
fn truncation_error_is_nonincreasing_in_rank() {
    let g = random_graph(12, 0.3, 2, 42);
    let lap = g.laplacian();
    let exact = heat_kernel_oracle(&g, 0.8);
    let errors: Vec<f64> = (1..=12)
        .map(|r| {
            frobenius_gap(
                &to_rows(&heat_kernel_expansion(&lap, 0.8, r).unwrap()),
                &exact,
            )
        })
        .collect();
    for pair in errors.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "{errors:?}");
    }
}

#[test]
fn rank_one_dominates_at_large_time() {
    let path: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
    let g = gkd_core::graph::Graph::new(
        10,
        path,
        random_matrix(10, 2, 0),
        vec![None; 10],
        Default::default(),
    )
    .unwrap();
    let lap = g.laplacian();
    let t = 2000.0;
    let exact = heat_kernel_oracle(&g, t);
    let rank_one = to_rows(&heat_kernel_expansion(&lap, t, 1).unwrap());
    let scale = frobenius_gap(&exact, &vec![vec![0.0; 10]; 10]);
    assert!(frobenius_gap(&rank_one, &exact) / scale < 1e-6);
}

#[test]
fn euclidean_heat_kernel_reference_and_mass() {
    let t = 1.0 / (4.0 * std::f64::consts::PI);
    assert_abs_diff_eq!(
        euclidean_heat_kernel(0.0, t, 1).unwrap(),
        1.0,
        epsilon = 1e-12
    );

    let mut prev = f64::INFINITY;
    for k in 0..50 {
        let v = euclidean_heat_kernel(k as f64 * 0.1, 0.5, 2).unwrap();
        assert!(v < prev);
        prev = v;
    }

    let h = 1e-3;
    let mass: f64 = (-20_000..=20_000)
        .map(|i| euclidean_heat_kernel((i as f64 * h).abs(), 0.5, 1).unwrap() * h)
        .sum();
    assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-3);
}

#[test]
fn layer_average_equals_manual_loop() {
    let g = gkd_core::graph::Graph::new(
        3,
        vec![(0, 1)],
        Tensor::zeros(3, 1),
        vec![None; 3],
        Default::default(),
    )
    .unwrap();
    let delta = 0.2;
    let t = 0.5;
    let alpha = 1.7;
    let teacher = [random_matrix(3, 2, 1), random_matrix(3, 2, 2)];
    let student = [random_matrix(3, 2, 3), random_matrix(3, 2, 4)];
    let w = weight_matrix(&g, delta, &[0, 1, 2]).unwrap();

    let gauss = |h: &Tensor, i: usize, j: usize| {
        let d2: f64 = h
            .row(i)
            .iter()
            .zip(h.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (-d2 / (4.0 * t)).exp()
    };
    let mut manual = 0.0;
    for (ht, hs) in teacher.iter().zip(&student) {
        for i in 0..3 {
            for j in 0..3 {
                let weight = if g.has_edge(i, j) { 1.0 } else { delta };
                manual += (weight * (gauss(ht, i, j) - gauss(hs, i, j))).powi(2);
            }
        }
    }
    manual *= alpha / 2.0;

    let mut tape = Tape::new();
    let kt: Vec<Tensor> = teacher
        .iter()
        .map(|h| Nhk::Gauss { t }.eval(h).unwrap())
        .collect();
    let hs: Vec<_> = student.iter().map(|h| tape.param(h)).collect();
    let kernels = vec![Nhk::Gauss { t }; 2];
    let loss = layer_avg_distill(&mut tape, &kt, &hs, &kernels, alpha, &w).unwrap();
    assert_abs_diff_eq!(tape.value(loss).item(), manual, epsilon = 1e-10);
}

#[test]
fn inverse_gram_is_symmetric_psd() {
    let h = random_matrix(9, 4, 5);
    let phi = random_matrix(4, 8, 6);
    let mut tape = Tape::new();
    let (hv, pv) = (tape.constant(h), tape.constant(phi));
    let k = inverse_nhk_gram(&mut tape, pv, hv).unwrap();
    let k = tape.value(k);
    assert!(k.asymmetry() < 1e-12);
    assert!(min_eigenvalue(k) >= -1e-10);
}

#[test]
fn kd_loss_matches_direct_kl() {
    let teacher = random_matrix(4, 3, 7).scale(3.0);
    let student = random_matrix(4, 3, 8).scale(3.0);
    let tau = 2.0;
    let mask = [0, 2, 3];
    let mut expect = 0.0;
    for &i in &mask {
        let p = softmax(teacher.row(i), tau);
        let q = softmax(student.row(i), tau);
        expect += p
            .iter()
            .zip(&q)
            .map(|(pi, qi)| pi * (pi / qi).ln())
            .sum::<f64>();
    }
    expect *= tau * tau / mask.len() as f64;
    let mut tape = Tape::new();
    let sv = tape.param(&student);
    let loss = kd_soft_label_loss(&mut tape, &teacher, sv, tau, &mask).unwrap();
    assert_abs_diff_eq!(tape.value(loss).item(), expect, epsilon = 1e-12);
}

#[test]
fn adam_matches_hand_recurrence() {
    let cfg = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::from_rows(&dense(&[&[1.0, -2.0]])).unwrap()];
    let mut adam = Adam::new(cfg, &params);
    let (mut x, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for step in 1..=10 {
        let grad = [2.0 * x[0], 0.5 * x[1].powi(3)];
        adam.step(&mut params, &[Tensor::from_rows(&[grad.to_vec()]).unwrap()])
            .unwrap();
        for k in 0..2 {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let mh = m[k] / (1.0 - cfg.beta1.powi(step));
            let vh = v[k] / (1.0 - cfg.beta2.powi(step));
            x[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        assert_abs_diff_eq!(params[0].get(0, 0), x[0], epsilon = 1e-14);
        assert_abs_diff_eq!(params[0].get(0, 1), x[1], epsilon = 1e-14);
    }
}

#[test]
fn minibatch_loss_is_unbiased_for_full_loss() {
    let g = sbm_generate(&SbmParams {
        blocks: vec![25, 25],
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 4,
        noise_sigma: 1.0,
        seed: 5,
    })
    .unwrap();
    let n = 50;
    let nhk = Nhk::Gauss { t: 1.0 };
    let kt = nhk.eval(&random_matrix(n, 4, 1)).unwrap();
    let hs = random_matrix(n, 4, 2);
    let all: Vec<usize> = (0..n).collect();

    let loss_on = |nodes: &[usize], unbias: Option<usize>| {
        let mut w = weight_matrix(&g, 0.1, nodes).unwrap();
        if let Some(b) = unbias {
            unbias_batch_weights(&mut w, n, b);
        }
        let mut tape = Tape::new();
        let h = tape.constant(hs.select_rows(nodes));
        let ks = nhk.apply(&mut tape, h).unwrap();
        let l = distill_loss(&mut tape, &kt.submatrix(nodes, nodes), ks, &w).unwrap();
        tape.value(l).item()
    };
    let full = loss_on(&all, None);
    let b = 10;
    let mean = (0..200)
        .map(|step| loss_on(&sample_distill_batch(n, b, 9, step).unwrap(), Some(b)))
        .sum::<f64>()
        / 200.0;
    assert!(
        (mean - full).abs() / full < 0.05,
        "mean {mean} vs full {full}"
    );
}
