//! Behaviour of the training loops on small seeded graphs.

mod common;

use gkd_core::distill::{
    distill_loss, inverse_nhk_gram, layer_avg_distill, weight_matrix, InverseNhkMapper,
};
use gkd_core::graph::{sbm_generate, split_edges, Graph, NodeRemap, SbmParams};
use gkd_core::model::{GnnModel, ModelConfig};
use gkd_core::nhk::{KernelSpec, Nhk};
use gkd_core::tensor::{Tape, Tensor};
use gkd_core::train::{
    grid_search, pgkd_mapper_step, sample_distill_batch, train_online, train_student,
    train_student_gkd, train_teacher, Adam, AdamConfig, Axis, SearchSpace, TeacherSignals,
    TrainPlan,
};

fn sbm(blocks: Vec<usize>, p_in: f64, p_out: f64, seed: u64) -> Graph {
    sbm_generate(&SbmParams {
        blocks,
        p_in,
        p_out,
        feature_dim: 8,
        noise_sigma: 1.0,
        seed,
    })
    .unwrap()
}

fn majority_rate(g: &Graph) -> f64 {
    let test = &g.masks().test;
    let mut counts = vec![0usize; g.num_classes()];
    for &i in test {
        counts[g.labels()[i].unwrap()] += 1;
    }
    *counts.iter().max().unwrap() as f64 / test.len() as f64
}

#[test]
fn teacher_beats_majority_baseline() {
    for seed in 0..5 {
        let g = sbm(vec![30, 30], 0.9, 0.05, seed);
        let plan = TrainPlan {
            epochs: 100,
            seed,
            ..TrainPlan::default()
        };
        let out = train_teacher(&g, &ModelConfig::gcn(2, 16), &plan).unwrap();
        assert!(
            out.test_acc > majority_rate(&g),
            "seed {seed}: {}",
            out.test_acc
        );
    }
}

#[test]
fn training_loss_decreases_early_on_separable_data() {
    let g = sbm(vec![30, 30], 0.9, 0.05, 1);
    let plan = TrainPlan {
        epochs: 5,
        seed: 1,
        ..TrainPlan::default()
    };
    let out = train_teacher(&g, &ModelConfig::gcn(2, 16), &plan).unwrap();
    for pair in out.history.windows(2) {
        assert!(pair[1].loss_pre <= pair[0].loss_pre, "{:?}", out.history);
    }
}

#[test]
fn zero_epochs_rejected() {
    let g = sbm(vec![5, 5], 0.5, 0.1, 0);
    let plan = TrainPlan {
        epochs: 0,
        ..TrainPlan::default()
    };
    assert!(train_teacher(&g, &ModelConfig::default(), &plan).is_err());
}

#[test]
fn adam_runs_are_reproducible() {
    let run = || {
        let mut params = vec![common::random_matrix(3, 2, 1)];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        for k in 0..10 {
            let grads = vec![common::random_matrix(3, 2, 100 + k)];
            adam.step(&mut params, &grads).unwrap();
        }
        params
    };
    assert_eq!(run(), run());
}

#[test]
fn self_alignment_gives_zero_distill_term() {
    let g = sbm(vec![10, 10], 0.4, 0.05, 2);
    let model = ModelConfig::gcn(3, 8)
        .build(g.feature_dim(), g.num_classes(), 4)
        .unwrap();
    let remap = NodeRemap::identity(g.num_nodes());
    let signals = TeacherSignals::compute(&model, &g, &remap).unwrap();
    let w = weight_matrix(&g, 0.1, &(0..g.num_nodes()).collect::<Vec<_>>()).unwrap();
    let nhk = Nhk::Gauss { t: 1.0 };
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &g, true).unwrap();
    let layers = 1..=model.num_layers();
    let teacher: Vec<Tensor> = layers
        .clone()
        .map(|l| nhk.eval(&signals.layers[l]).unwrap())
        .collect();
    let student: Vec<_> = layers.map(|l| pass.trace[l]).collect();
    let kernels = vec![nhk; student.len()];
    let loss = layer_avg_distill(&mut tape, &teacher, &student, &kernels, 1.0, &w).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
}

#[test]
fn shared_mapper_on_identical_features_gives_zero_distill_term() {
    let h = common::random_matrix(8, 4, 3);
    let mapper = InverseNhkMapper::with_default_width(4, 9);
    let mut tape = Tape::new();
    let (hv, pv) = (tape.constant(h), tape.constant(mapper.weight.clone()));
    let k_student = inverse_nhk_gram(&mut tape, pv, hv).unwrap();
    let k_teacher = tape.value(k_student).clone();
    let w = Tensor::filled(8, 8, 1.0);
    let loss = distill_loss(&mut tape, &k_teacher, k_student, &w).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
}

/// Reconstruction loss over `steps` mapper steps with both networks frozen.
fn frozen_reconstruction_trace(steps: usize, lr: f64) -> Vec<f64> {
    let g = sbm(vec![10, 10], 0.4, 0.05, 7);
    let teacher = ModelConfig::gcn(3, 8).build(g.feature_dim(), 2, 1).unwrap();
    let student = ModelConfig::gcn(3, 8).build(g.feature_dim(), 2, 2).unwrap();
    let features = |m: &GnnModel| {
        let mut tape = Tape::new();
        let pass = m.forward(&mut tape, &g, false).unwrap();
        (
            tape.value(pass.trace[2]).clone(),
            tape.value(pass.trace[1]).clone(),
        )
    };
    let (t_late, t_early) = features(&teacher);
    let (s_late, s_early) = features(&student);
    let mut phi = vec![InverseNhkMapper::with_default_width(8, 5).weight];
    let mut adam = Adam::new(AdamConfig::with_lr(lr), &phi);
    (0..steps)
        .map(|_| {
            pgkd_mapper_step(
                &mut phi,
                &mut adam,
                (&t_late, &t_early),
                (&s_late, &s_early),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn reconstruction_descends_with_frozen_networks() {
    let trace = frozen_reconstruction_trace(51, 1e-3);
    for (k, pair) in trace.windows(2).enumerate().skip(1) {
        assert!(
            pair[1] <= pair[0] + 1e-9,
            "step {k}: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    assert!(trace[50] < trace[0]);
}

#[test]
fn offline_distillation_leaves_teacher_untouched() {
    let g = sbm(vec![15, 15], 0.3, 0.02, 3);
    let part = split_edges(&g, 0.5, 3).unwrap();
    let remap = NodeRemap::identity(g.num_nodes());
    let plan = TrainPlan {
        epochs: 20,
        ..TrainPlan::default()
    };
    let teacher = train_teacher(&g, &ModelConfig::default(), &plan)
        .unwrap()
        .model;
    let before: Vec<Vec<u64>> = bits(&teacher);
    for kernel in [KernelSpec::Gauss { t: 1.0 }, KernelSpec::Parametric] {
        let plan = TrainPlan {
            kernel,
            ..plan.clone()
        };
        train_student_gkd(&part, &remap, &teacher, &g, &ModelConfig::default(), &plan).unwrap();
        assert_eq!(bits(&teacher), before);
    }
}

fn bits(model: &GnnModel) -> Vec<Vec<u64>> {
    model
        .weights()
        .iter()
        .map(|w| w.data().iter().map(|x| x.to_bits()).collect())
        .collect()
}

#[test]
fn full_batch_sampler_returns_every_node() {
    for step in 0..3 {
        assert_eq!(
            sample_distill_batch(17, 17, 5, step).unwrap(),
            (0..17).collect::<Vec<_>>()
        );
    }
}

#[test]
fn zero_alpha_online_follows_independent_trajectories() {
    let g = sbm(vec![15, 15], 0.3, 0.02, 4);
    let part = split_edges(&g, 0.5, 4).unwrap();
    let remap = NodeRemap::identity(g.num_nodes());
    let mut plan = TrainPlan {
        epochs: 30,
        seed: 4,
        ..TrainPlan::default()
    };
    plan.distill.alpha = 0.0;
    let cfg = ModelConfig::default();
    let online = train_online(&part, &remap, &g, &cfg, &cfg, &plan).unwrap();
    let teacher = train_teacher(&g, &cfg, &plan).unwrap();
    let student = train_student(&part, &cfg, &plan).unwrap();
    assert_eq!(bits(&online.teacher.model), bits(&teacher.model));
    assert_eq!(bits(&online.student.model), bits(&student.model));
    assert_eq!(online.student.history, student.history);
}

#[test]
fn online_runs_are_deterministic() {
    let g = sbm(vec![15, 15], 0.3, 0.02, 5);
    let part = split_edges(&g, 0.5, 5).unwrap();
    let remap = NodeRemap::identity(g.num_nodes());
    let plan = TrainPlan {
        epochs: 15,
        ..TrainPlan::default()
    };
    let cfg = ModelConfig::default();
    let a = train_online(&part, &remap, &g, &cfg, &cfg, &plan).unwrap();
    let b = train_online(&part, &remap, &g, &cfg, &cfg, &plan).unwrap();
    assert_eq!(a.student.history, b.student.history);
    assert_eq!(a.teacher.history, b.teacher.history);
}

#[test]
fn grid_search_contracts() {
    let template = TrainPlan::default();
    let single = SearchSpace::new().with(Axis::Alpha, &[0.5]);
    let res = grid_search(&single, &template, |_| Ok((0.3, 0.2))).unwrap();
    assert_eq!(res.rows.len(), 1);
    assert_eq!(res.best_plan.distill.alpha, 0.5);

    let space = SearchSpace::new()
        .with(Axis::Alpha, &[0.1, 1.0, 10.0])
        .with(Axis::Delta, &[0.0, 0.5]);
    let res = grid_search(&space, &template, |p| {
        Ok((p.distill.alpha.ln() * p.distill.delta.cos(), 0.0))
    })
    .unwrap();
    assert_eq!(res.rows.len(), 6);
    let max = res
        .rows
        .iter()
        .map(|r| r.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(res.best().val_acc, max);
    assert_eq!(res.best_plan.distill.alpha, 10.0);
    assert_eq!(res.best_plan.distill.delta, 0.0);
}

#[test]
fn online_distillation_not_worse_than_student() {
    let cfg = ModelConfig::gcn(3, 32);
    let (mut online_sum, mut student_sum) = (0.0, 0.0);
    for seed in 0..5 {
        let g = sbm_generate(&SbmParams {
            blocks: vec![50; 4],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            noise_sigma: 1.0,
            seed,
        })
        .unwrap();
        let part = split_edges(&g, 0.5, seed).unwrap();
        let remap = NodeRemap::identity(g.num_nodes());
        let mut plan = TrainPlan {
            epochs: 200,
            seed,
            kernel: KernelSpec::Gauss { t: 4.0 },
            ..TrainPlan::default()
        };
        plan.distill.alpha = 0.003;
        online_sum += train_online(&part, &remap, &g, &cfg, &cfg, &plan)
            .unwrap()
            .student
            .test_acc;
        student_sum += train_student(&part, &cfg, &plan).unwrap().test_acc;
    }
    assert!(
        online_sum >= student_sum,
        "online {} vs student {}",
        online_sum / 5.0,
        student_sum / 5.0
    );
}
