//! Acceptance protocol: the seeded synthetic experiments and fixtures the
//! `acceptance` test target scores, plus an in-process driver for the `gkd`
//! command line.

use std::ffi::OsString;

use gkd_cli::app::{self, EXIT_OK};
use gkd_cli::commands::evaluate;
use gkd_core::distill::InverseNhkMapper;
use gkd_core::graph::{sbm_generate, split_edges, split_nodes, Graph, NodeRemap, SbmParams};
use gkd_core::model::{GnnModel, ModelConfig};
use gkd_core::nhk::KernelSpec;
use gkd_core::tensor::{Tape, Tensor};
use gkd_core::train::{
    grid_search, pgkd_mapper_step, train_student, train_student_gkd, train_teacher, Adam,
    AdamConfig, Axis, SearchSpace, TrainOutcome, TrainPlan,
};
use gkd_core::Result;

/// Seeds averaged over in the efficacy experiments.
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Gauss kernel time used for geometric distillation.
pub const GKD_TIME: f64 = 4.0;
/// Distillation weights searched for the Gauss kernel.
pub const GKD_ALPHAS: [f64; 3] = [0.001, 0.003, 0.01];
/// Distillation weights searched for the learned inverse kernel.
pub const PGKD_ALPHAS: [f64; 3] = [1e-4, 1e-3, 1e-2];
/// Non-edge pair weights searched.
pub const DELTAS: [f64; 2] = [0.0, 0.1];
/// Required accuracy gain of a distilled student over the plain student.
pub const MARGIN: f64 = 0.01;
/// Privileged-information ratio of both split kinds.
pub const PIR: f64 = 0.5;

/// Four-block SBM with 100 nodes per block.
pub fn efficacy_graph(seed: u64) -> Result<Graph> {
    sbm_generate(&SbmParams {
        blocks: vec![100; 4],
        p_in: 0.1,
        p_out: 0.01,
        feature_dim: 16,
        noise_sigma: 1.0,
        seed,
    })
}

/// Three-layer GCN with hidden width 32, for teachers and students alike.
pub fn model_cfg() -> ModelConfig {
    ModelConfig::gcn(3, 32)
}

/// 200-epoch plan with default optimiser settings.
pub fn plan(seed: u64, kernel: KernelSpec) -> TrainPlan {
    TrainPlan {
        epochs: 200,
        seed,
        kernel,
        ..TrainPlan::default()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Teacher, plain student and partial graph of one efficacy seed.
pub struct Baseline {
    pub seed: u64,
    pub graph: Graph,
    pub partial: Graph,
    pub remap: NodeRemap,
    pub teacher: TrainOutcome,
    /// Test accuracy of the complete-graph teacher evaluated on the partial graph.
    pub teacher_on_partial: f64,
    /// Test accuracy of the student trained on the partial graph alone.
    pub student: f64,
}

impl Baseline {
    pub fn build(seed: u64, node_aware: bool) -> Result<Self> {
        let graph = efficacy_graph(seed)?;
        let (partial, remap) = if node_aware {
            split_nodes(&graph, PIR, seed)?
        } else {
            (
                split_edges(&graph, PIR, seed)?,
                NodeRemap::identity(graph.num_nodes()),
            )
        };
        let p = plan(seed, KernelSpec::Gauss { t: GKD_TIME });
        let teacher = train_teacher(&graph, &model_cfg(), &p)?;
        let teacher_on_partial = evaluate(&teacher.model, &partial)?.test_acc;
        let student = train_student(&partial, &model_cfg(), &p)?.test_acc;
        Ok(Baseline {
            seed,
            graph,
            partial,
            remap,
            teacher,
            teacher_on_partial,
            student,
        })
    }

    /// Test accuracy of the distilled student whose (α, δ) grid point has
    /// the best validation accuracy.
    pub fn distilled(&self, kernel: KernelSpec, alphas: &[f64]) -> Result<f64> {
        let space = SearchSpace::new()
            .with(Axis::Alpha, alphas)
            .with(Axis::Delta, &DELTAS);
        let result = grid_search(&space, &plan(self.seed, kernel), |p| {
            let o = train_student_gkd(
                &self.partial,
                &self.remap,
                &self.teacher.model,
                &self.graph,
                &model_cfg(),
                p,
            )?;
            Ok((o.best_val_acc, o.test_acc))
        })?;
        Ok(result.best().test_acc)
    }
}

/// Baselines of every seed in [`SEEDS`].
pub fn baselines(node_aware: bool) -> Result<Vec<Baseline>> {
    SEEDS
        .iter()
        .map(|&s| Baseline::build(s, node_aware))
        .collect()
}

/// Mean test accuracies over seeds.
#[derive(Debug, Clone, Copy)]
pub struct Means {
    pub oracle: f64,
    pub teacher_on_partial: f64,
    pub student: f64,
    pub distilled: f64,
}

impl Means {
    /// distilled ≥ student + margin, oracle ≥ teacher on partial ≥ student − margin.
    pub fn ordering_holds(&self) -> bool {
        self.distilled >= self.student + MARGIN
            && self.oracle >= self.teacher_on_partial
            && self.teacher_on_partial >= self.student - MARGIN
    }

    pub fn describe(&self, name: &str) -> String {
        format!(
            "oracle {:.4}, teacher on partial {:.4}, student {:.4}, {name} {:.4} (needs >= {:.4})",
            self.oracle,
            self.teacher_on_partial,
            self.student,
            self.distilled,
            self.student + MARGIN
        )
    }
}

/// Distils every baseline through `kernel` and averages.
pub fn ordering_run(baselines: &[Baseline], kernel: &KernelSpec, alphas: &[f64]) -> Result<Means> {
    let distilled = baselines
        .iter()
        .map(|b| b.distilled(kernel.clone(), alphas))
        .collect::<Result<Vec<_>>>()?;
    let column = |f: fn(&Baseline) -> f64| mean(&baselines.iter().map(f).collect::<Vec<_>>());
    Ok(Means {
        oracle: column(|b| b.teacher.test_acc),
        teacher_on_partial: column(|b| b.teacher_on_partial),
        student: column(|b| b.student),
        distilled: mean(&distilled),
    })
}

/// Reconstruction loss over `steps` inverse-kernel mapper steps at learning
/// rate `lr` on a fixed 20-node graph, teacher and student weights frozen.
/// Entry `k` is the loss before step `k`.
pub fn frozen_reconstruction(steps: usize, lr: f64) -> Result<Vec<f64>> {
    let g = sbm_generate(&SbmParams {
        blocks: vec![10, 10],
        p_in: 0.4,
        p_out: 0.05,
        feature_dim: 8,
        noise_sigma: 1.0,
        seed: 7,
    })?;
    let teacher = model_cfg().build(g.feature_dim(), 2, 1)?;
    let student = model_cfg().build(g.feature_dim(), 2, 2)?;
    let traces = |m: &GnnModel| -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let pass = m.forward(&mut tape, &g, false)?;
        Ok((
            tape.value(pass.trace[2]).clone(),
            tape.value(pass.trace[1]).clone(),
        ))
    };
    let (t_late, t_early) = traces(&teacher)?;
    let (s_late, s_early) = traces(&student)?;
    let mut phi = vec![InverseNhkMapper::with_default_width(32, 5).weight];
    let mut adam = Adam::new(AdamConfig::with_lr(lr), &phi);
    (0..steps)
        .map(|_| {
            pgkd_mapper_step(
                &mut phi,
                &mut adam,
                (&t_late, &t_early),
                (&s_late, &s_early),
            )
        })
        .collect()
}

/// Runs the `gkd` command line in process. Returns stdout on exit code 0,
/// otherwise the exit code and stderr.
pub fn gkd<I, T>(args: I) -> std::result::Result<String, (u8, String)>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("gkd")).chain(args.into_iter().map(Into::into));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = app::run(argv, &mut out, &mut err);
    if code == EXIT_OK {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err((code, String::from_utf8_lossy(&err).into_owned()))
    }
}
