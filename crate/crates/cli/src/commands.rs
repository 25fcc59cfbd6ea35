//! Subcommand implementations. Each takes parsed arguments and returns a
//! value the binary prints; files land in the output directory.

use std::path::{Path, PathBuf};

use gkd_core::graph::{save_graph, sbm_generate, Graph, SbmParams};
use gkd_core::model::{accuracy, load_checkpoint, save_checkpoint, GnnModel};
use gkd_core::train::{
    train_compression, train_online, train_self_distill, train_student, train_student_gkd,
    train_teacher, TrainOutcome, TrainPlan,
};
use gkd_core::{GkdError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{partial_from_split, Mode, RunConfig, SplitConfig, SplitKind};
use crate::output::{
    ensure_dir, write_csv, write_json, write_metrics, AggregateRow, ModelSummary, ResultRow,
    Summary,
};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TEACHER_METRICS_FILE: &str = "teacher_metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TEACHER_CHECKPOINT_FILE: &str = "teacher_checkpoint.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "summary.csv";

/// Writes a seeded SBM graph to `out`.
pub fn cmd_gen_synthetic(params: &SbmParams, out: &Path) -> Result<Graph> {
    let g = sbm_generate(params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_graph(&g, out)?;
    Ok(g)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out.clone().ok_or_else(|| {
        GkdError::invalid("out", "no output directory given (config `out` or --out)")
    })
}

fn write_run(dir: &Path, outcome: &TrainOutcome, file: &str, ckpt: &str) -> Result<()> {
    write_metrics(&dir.join(file), &outcome.history)?;
    save_checkpoint(&outcome.model, dir.join(ckpt))
}

/// Trains a teacher on the complete graph regardless of the configured mode.
pub fn cmd_train_teacher(cfg: &RunConfig) -> Result<Summary> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Teacher;
    run(&cfg)
}

/// Runs a student-side mode (student, gkd, pgkd, online, self_distill, compression).
pub fn cmd_distill(cfg: &RunConfig) -> Result<Summary> {
    if cfg.mode == Mode::Teacher {
        return Err(GkdError::invalid(
            "mode",
            "use train-teacher for teacher runs",
        ));
    }
    run(cfg)
}

/// Validates the config, trains, and writes checkpoint(s), metrics and summary.
pub fn run(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let plan = cfg.plan();
    let graphs = cfg.graphs()?;
    ensure_dir(&dir)?;
    let (model, teacher) = match cfg.mode {
        Mode::Teacher => {
            let o = train_teacher(&graphs.complete, &cfg.teacher, &plan)?;
            write_run(&dir, &o, METRICS_FILE, CHECKPOINT_FILE)?;
            (ModelSummary::from(&o), None)
        }
        Mode::Student => {
            let o = train_student(&graphs.partial, &cfg.student, &plan)?;
            write_run(&dir, &o, METRICS_FILE, CHECKPOINT_FILE)?;
            (ModelSummary::from(&o), None)
        }
        Mode::Gkd | Mode::Pgkd => {
            let ckpt = cfg.teacher_checkpoint.as_ref().expect("validated");
            let teacher = load_checkpoint(ckpt)?;
            let o = train_student_gkd(
                &graphs.partial,
                &graphs.remap,
                &teacher,
                &graphs.complete,
                &cfg.student,
                &plan,
            )?;
            write_run(&dir, &o, METRICS_FILE, CHECKPOINT_FILE)?;
            (ModelSummary::from(&o), None)
        }
        Mode::Online => {
            let o = train_online(
                &graphs.partial,
                &graphs.remap,
                &graphs.complete,
                &cfg.teacher,
                &cfg.student,
                &plan,
            )?;
            write_run(&dir, &o.student, METRICS_FILE, CHECKPOINT_FILE)?;
            write_run(
                &dir,
                &o.teacher,
                TEACHER_METRICS_FILE,
                TEACHER_CHECKPOINT_FILE,
            )?;
            (
                ModelSummary::from(&o.student),
                Some(ModelSummary::from(&o.teacher)),
            )
        }
        Mode::SelfDistill | Mode::Compression => {
            let o = if cfg.mode == Mode::SelfDistill {
                train_self_distill(&graphs.complete, &cfg.student, &plan)?
            } else {
                train_compression(&graphs.complete, &cfg.teacher, &cfg.student, &plan)?
            };
            write_run(&dir, &o.student, METRICS_FILE, CHECKPOINT_FILE)?;
            write_run(
                &dir,
                &o.teacher,
                TEACHER_METRICS_FILE,
                TEACHER_CHECKPOINT_FILE,
            )?;
            (
                ModelSummary::from(&o.student),
                Some(ModelSummary::from(&o.teacher)),
            )
        }
    };
    let summary = Summary {
        mode: cfg.mode.name().to_string(),
        seed: cfg.seed,
        model,
        teacher,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Accuracies of a checkpoint on a graph's masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub fn evaluate(model: &GnnModel, g: &Graph) -> Result<EvalReport> {
    let logits = model.predict(g)?;
    let m = g.masks();
    Ok(EvalReport {
        train_acc: accuracy(&logits, g.labels(), &m.train),
        val_acc: accuracy(&logits, g.labels(), &m.val),
        test_acc: accuracy(&logits, g.labels(), &m.test),
    })
}

pub fn cmd_eval(checkpoint: &Path, graph: &Path) -> Result<EvalReport> {
    let model = load_checkpoint(checkpoint)?;
    let g = gkd_core::graph::load_graph(graph)?;
    evaluate(&model, &g)
}

/// Methods reported per PIR value, in output order.
pub const SWEEP_METHODS: [&str; 4] = ["oracle", "teacher", "student", "distilled"];

/// For each PIR value and seed: the oracle (teacher trained and tested on
/// the complete graph), the same teacher tested on the partial graph, a
/// student trained on the partial graph, and a distilled student (GKD, or
/// PGKD when the kernel is parametric). Writes `results.csv` (one row per
/// pir × method × seed) and `summary.csv` (mean and standard deviation of
/// test accuracy over seeds).
pub fn cmd_sweep_pir(cfg: &RunConfig, pirs: &[f64], seeds: &[u64]) -> Result<Vec<AggregateRow>> {
    if let Some(&bad) = pirs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(GkdError::invalid(
            "pir",
            format!("{bad} must lie in [0, 1]"),
        ));
    }
    if pirs.is_empty() || seeds.is_empty() {
        return Err(GkdError::invalid(
            "pir",
            "need at least one pir value and one seed",
        ));
    }
    let mut probe = cfg.clone();
    probe.mode = Mode::Teacher;
    probe.validate()?;
    let dir = out_dir(cfg)?;
    let complete = gkd_core::graph::load_graph(&cfg.graph)?;
    let kind = cfg.split.as_ref().map_or(SplitKind::Edge, |s| s.kind);
    ensure_dir(&dir)?;

    let teachers = seeds
        .iter()
        .map(|&seed| {
            let plan = TrainPlan {
                seed,
                ..probe.plan()
            };
            train_teacher(&complete, &cfg.teacher, &plan)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &pir in pirs {
        for (&seed, teacher) in seeds.iter().zip(&teachers) {
            let split = SplitConfig { kind, pir, seed };
            let (partial, remap) = partial_from_split(&complete, &split)?;
            let plan = TrainPlan { seed, ..cfg.plan() };
            let on_partial = evaluate(&teacher.model, &partial)?;
            let student = train_student(&partial, &cfg.student, &plan)?;
            let distilled = train_student_gkd(
                &partial,
                &remap,
                &teacher.model,
                &complete,
                &cfg.student,
                &plan,
            )?;
            let scores = [
                (teacher.best_val_acc, teacher.test_acc),
                (on_partial.val_acc, on_partial.test_acc),
                (student.best_val_acc, student.test_acc),
                (distilled.best_val_acc, distilled.test_acc),
            ];
            for (method, (val_acc, test_acc)) in SWEEP_METHODS.iter().zip(scores) {
                rows.push(ResultRow {
                    pir,
                    method: method.to_string(),
                    seed,
                    val_acc,
                    test_acc,
                });
            }
        }
    }
    write_csv(&dir.join(RESULTS_FILE), &rows)?;
    let aggregate = aggregate(&rows, pirs);
    write_csv(&dir.join(AGGREGATE_FILE), &aggregate)?;
    Ok(aggregate)
}

/// Mean and population standard deviation of test accuracy per (pir, method).
pub fn aggregate(rows: &[ResultRow], pirs: &[f64]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &pir in pirs {
        for method in SWEEP_METHODS {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.pir == pir && r.method == method)
                .map(|r| r.test_acc)
                .collect();
            if accs.is_empty() {
                continue;
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
            out.push(AggregateRow {
                pir,
                method: method.to_string(),
                mean_acc: mean,
                std_acc: var.sqrt(),
            });
        }
    }
    out
}
