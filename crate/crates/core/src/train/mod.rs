//! Training loops: supervised teachers and students, offline and online
//! geometric distillation, parametric distillation, and grid search.
//!
//! Every loop evaluates the weights at the start of each epoch from the
//! same forward pass that produces the gradient, keeps the weights with the
//! best validation accuracy (lower validation loss, then earlier epoch, on
//! ties), and is fully determined by
//! [`TrainPlan::seed`].

mod adam;
mod grid;
mod sampler;

pub use adam::{Adam, AdamConfig};
pub use grid::{grid_search, Axis, GridResult, GridRow, SearchSpace};
pub use sampler::{batches_per_cycle, sample_distill_batch};

use serde::{Deserialize, Serialize};

use crate::distill::{
    inverse_nhk_gram, kd_soft_label_loss, layer_avg_distill, reconstruction_loss,
    unbias_batch_weights, weight_matrix, DistillConfig, InverseNhkMapper,
};
use crate::error::{GkdError, Result};
use crate::graph::{Graph, NodeRemap};
use crate::model::{accuracy, masked_cross_entropy, ForwardPass, GnnModel, ModelConfig};
use crate::nhk::{KernelSpec, Nhk};
use crate::tensor::{Tape, Tensor, Var};

const BATCH_SEED_SALT: u64 = 0x5EED_BA7C;
const MAPPER_SEED_SALT: u64 = 0x3A99_E800;

/// Optimisation schedule and distillation settings shared by all loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub epochs: usize,
    pub seed: u64,
    /// Stop once validation accuracy has not improved for this many epochs.
    pub patience: Option<usize>,
    /// Optimiser of the network weights.
    pub optimizer: AdamConfig,
    /// Optimiser of the inverse-kernel mapper.
    pub mapper_optimizer: AdamConfig,
    pub kernel: KernelSpec,
    pub distill: DistillConfig,
    /// Record per-epoch wall time. Off by default so that metrics are a
    /// pure function of the inputs.
    pub record_time: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 200,
            seed: 0,
            patience: None,
            optimizer: AdamConfig::default(),
            mapper_optimizer: AdamConfig::default(),
            kernel: KernelSpec::default(),
            distill: DistillConfig::default(),
            record_time: false,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(GkdError::invalid("epochs", "must be >= 1"));
        }
        if self.patience == Some(0) {
            return Err(GkdError::invalid("patience", "must be >= 1"));
        }
        self.optimizer.validate("optimizer.lr")?;
        self.mapper_optimizer.validate("mapper_optimizer.lr")?;
        self.kernel.validate()?;
        self.distill.validate()
    }
}

/// Per-epoch record of losses and accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_pre: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_dis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_kd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_rec: Option<f64>,
    /// Cross-entropy on the validation mask; breaks validation-accuracy ties.
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation accuracy.
    pub model: GnnModel,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy of the selected weights.
    pub test_acc: f64,
    pub history: Vec<EpochMetrics>,
    /// Final inverse-kernel mappers of a parametric run (teacher, student).
    pub mappers: Option<(InverseNhkMapper, InverseNhkMapper)>,
}

/// Losses contributed on top of the supervised term in one epoch.
#[derive(Default)]
struct Extras {
    dis: Option<Var>,
    kd: Option<Var>,
    rec: Option<f64>,
}

/// Tracks best-validation weights and early stopping. Higher validation
/// accuracy wins; equal accuracies are decided by lower validation loss,
/// then by the earlier epoch.
struct Selector {
    best: Option<Best>,
    patience: Option<usize>,
}

struct Best {
    epoch: usize,
    val_acc: f64,
    val_loss: f64,
    test_acc: f64,
    model: GnnModel,
}

impl Selector {
    fn new(patience: Option<usize>) -> Self {
        Selector {
            best: None,
            patience,
        }
    }

    fn observe(&mut self, m: &EpochMetrics, model: &GnnModel) {
        let better = self.best.as_ref().is_none_or(|b| {
            m.val_acc > b.val_acc || (m.val_acc == b.val_acc && m.val_loss < b.val_loss)
        });
        if better {
            self.best = Some(Best {
                epoch: m.epoch,
                val_acc: m.val_acc,
                val_loss: m.val_loss,
                test_acc: m.test_acc,
                model: model.clone(),
            });
        }
    }

    fn should_stop(&self, epoch: usize) -> bool {
        match (self.patience, &self.best) {
            (Some(p), Some(b)) => epoch - b.epoch >= p,
            _ => false,
        }
    }

    fn finish(
        self,
        history: Vec<EpochMetrics>,
        mappers: Option<(InverseNhkMapper, InverseNhkMapper)>,
    ) -> TrainOutcome {
        let best = self.best.expect("at least one epoch");
        TrainOutcome {
            model: best.model,
            best_epoch: best.epoch,
            best_val_acc: best.val_acc,
            test_acc: best.test_acc,
            history,
            mappers,
        }
    }
}

fn metrics_from(
    tape: &Tape,
    pass: &ForwardPass,
    g: &Graph,
    epoch: usize,
    pre: Var,
    extras: &Extras,
) -> EpochMetrics {
    let logits = tape.value(pass.logits);
    let m = g.masks();
    EpochMetrics {
        epoch,
        loss_pre: tape.value(pre).item(),
        loss_dis: extras.dis.map(|v| tape.value(v).item()),
        loss_kd: extras.kd.map(|v| tape.value(v).item()),
        loss_rec: extras.rec,
        val_loss: masked_cross_entropy(logits, g.labels(), &m.val),
        train_acc: accuracy(logits, g.labels(), &m.train),
        val_acc: accuracy(logits, g.labels(), &m.val),
        test_acc: accuracy(logits, g.labels(), &m.test),
        wall_ms: None,
    }
}

/// One supervised step with optional extra losses; returns the metrics of
/// the weights before the step.
fn supervised_step(
    model: &mut GnnModel,
    adam: &mut Adam,
    g: &Graph,
    labels: &[usize],
    alpha_kd: f64,
    epoch: usize,
    extra: impl FnOnce(&mut Tape, &ForwardPass) -> Result<Extras>,
) -> Result<EpochMetrics> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, g, true)?;
    let pre = tape.cross_entropy(pass.logits, labels, &g.masks().train)?;
    let extras = extra(&mut tape, &pass)?;
    let mut total = pre;
    if let Some(kd) = extras.kd {
        let a = tape.scale(pre, 1.0 - alpha_kd);
        let b = tape.scale(kd, alpha_kd);
        total = tape.add(a, b)?;
    }
    if let Some(dis) = extras.dis {
        total = tape.add(total, dis)?;
    }
    if !tape.value(total).is_finite() {
        return Err(GkdError::Numeric(format!("training loss at epoch {epoch}")));
    }
    let metrics = metrics_from(&tape, &pass, g, epoch, pre, &extras);
    tape.backward(total)?;
    let grads = pass
        .params
        .iter()
        .map(|&p| tape.grad(p).expect("trainable weights receive gradients"))
        .collect::<Vec<_>>();
    adam.step(model.weights_mut(), &grads)?;
    Ok(metrics)
}

fn check_labeled(g: &Graph) -> Result<()> {
    if g.masks().train.is_empty() {
        return Err(GkdError::invalid(
            "masks.train",
            "training needs at least one labelled node",
        ));
    }
    Ok(())
}

/// Generic loop: `extra(tape, pass, epoch, model)` adds distillation terms.
fn run_loop(
    g: &Graph,
    mut model: GnnModel,
    plan: &TrainPlan,
    mut extra: impl FnMut(&mut Tape, &ForwardPass, usize) -> Result<Extras>,
    mut mappers: impl FnMut() -> Option<(InverseNhkMapper, InverseNhkMapper)>,
) -> Result<TrainOutcome> {
    plan.validate()?;
    check_labeled(g)?;
    let labels = g.dense_labels();
    let mut adam = Adam::new(plan.optimizer, model.weights());
    let mut selector = Selector::new(plan.patience);
    let mut history = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        let started = plan.record_time.then(std::time::Instant::now);
        let snapshot = model.clone();
        let mut metrics = supervised_step(
            &mut model,
            &mut adam,
            g,
            &labels,
            plan.distill.alpha_kd,
            epoch,
            |tape, pass| extra(tape, pass, epoch),
        )?;
        metrics.wall_ms = started.map(|t| t.elapsed().as_secs_f64() * 1e3);
        selector.observe(&metrics, &snapshot);
        history.push(metrics);
        if selector.should_stop(epoch) {
            break;
        }
    }
    Ok(selector.finish(history, mappers()))
}

/// Supervised training with cross-entropy on the training mask.
pub fn train_teacher(g: &Graph, cfg: &ModelConfig, plan: &TrainPlan) -> Result<TrainOutcome> {
    let model = cfg.build(g.feature_dim(), g.num_classes(), plan.seed)?;
    run_loop(g, model, plan, |_, _, _| Ok(Extras::default()), || None)
}

/// A student trained without a teacher; identical to [`train_teacher`].
pub fn train_student(g: &Graph, cfg: &ModelConfig, plan: &TrainPlan) -> Result<TrainOutcome> {
    train_teacher(g, cfg, plan)
}

/// Frozen teacher signals restricted to the student's nodes.
pub struct TeacherSignals {
    /// Layer features of the teacher, trace-indexed, rows in student order.
    pub layers: Vec<Tensor>,
    pub logits: Tensor,
}

impl TeacherSignals {
    /// Runs `teacher` on its own graph and keeps the rows of the student nodes.
    pub fn compute(teacher: &GnnModel, teacher_graph: &Graph, remap: &NodeRemap) -> Result<Self> {
        let mut tape = Tape::new();
        let pass = teacher.forward(&mut tape, teacher_graph, false)?;
        Ok(Self::from_trace(&tape, &pass, remap))
    }

    fn from_trace(tape: &Tape, pass: &ForwardPass, remap: &NodeRemap) -> Self {
        let layers = pass
            .trace
            .iter()
            .map(|&v| tape.value(v).select_rows(&remap.new_to_old))
            .collect();
        let logits = tape.value(pass.logits).select_rows(&remap.new_to_old);
        TeacherSignals { layers, logits }
    }
}

fn check_remap(student: &Graph, teacher_graph: &Graph, remap: &NodeRemap) -> Result<()> {
    if remap.new_to_old.len() != student.num_nodes()
        || remap.old_to_new.len() != teacher_graph.num_nodes()
    {
        return Err(GkdError::dim(
            "node remap",
            format!(
                "{} student / {} teacher nodes",
                student.num_nodes(),
                teacher_graph.num_nodes()
            ),
            format!("{} / {}", remap.new_to_old.len(), remap.old_to_new.len()),
        ));
    }
    Ok(())
}

/// Kernel-alignment term for the student.
struct KernelGuide {
    pairs: Vec<(usize, usize)>,
    teacher_nhk: Vec<Nhk>,
    student_nhk: Vec<Nhk>,
    /// Full-graph teacher kernels, when not batching.
    teacher_kernels: Option<Vec<Tensor>>,
    w_full: Option<Tensor>,
    batch_seed: u64,
}

impl KernelGuide {
    fn new(
        signals: &TeacherSignals,
        teacher: &GnnModel,
        student: &GnnModel,
        g: &Graph,
        plan: &TrainPlan,
    ) -> Result<Self> {
        let pairs = plan
            .distill
            .layer_pairs(teacher.num_layers(), student.num_layers())?;
        // Randomized kernels share m and s across the pair; s defaults to twice the student width.
        let spec_for = |ls: usize| match plan.kernel {
            KernelSpec::Randomized {
                t,
                m,
                s: None,
                seed,
            } => KernelSpec::Randomized {
                t,
                m,
                s: Some(2 * student.trace_dim(ls)),
                seed,
            },
            ref other => other.clone(),
        };
        let teacher_nhk = pairs
            .iter()
            .map(|&(lt, ls)| spec_for(ls).instantiate(teacher.trace_dim(lt)))
            .collect::<Result<Vec<_>>>()?;
        let student_nhk = pairs
            .iter()
            .map(|&(_, ls)| spec_for(ls).instantiate(student.trace_dim(ls)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(b) = plan.distill.batch_size {
            if b > g.num_nodes() {
                return Err(GkdError::invalid(
                    "distill.batch_size",
                    format!("{b} exceeds {} nodes", g.num_nodes()),
                ));
            }
        }
        let mut guide = KernelGuide {
            pairs,
            teacher_nhk,
            student_nhk,
            teacher_kernels: None,
            w_full: None,
            batch_seed: plan.seed ^ BATCH_SEED_SALT,
        };
        if plan.distill.batch_size.is_none() {
            let all: Vec<usize> = (0..g.num_nodes()).collect();
            guide.w_full = Some(weight_matrix(g, plan.distill.delta, &all)?);
            guide.refresh(signals)?;
        }
        Ok(guide)
    }

    /// Recomputes full-graph teacher kernels from new teacher features.
    fn refresh(&mut self, signals: &TeacherSignals) -> Result<()> {
        if self.w_full.is_some() {
            self.teacher_kernels = Some(
                self.pairs
                    .iter()
                    .zip(&self.teacher_nhk)
                    .map(|(&(lt, _), k)| k.eval(&signals.layers[lt]))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(())
    }

    fn loss(
        &self,
        tape: &mut Tape,
        pass: &ForwardPass,
        signals: &TeacherSignals,
        g: &Graph,
        cfg: &DistillConfig,
        epoch: usize,
    ) -> Result<Var> {
        match (&self.teacher_kernels, &self.w_full) {
            (Some(kt), Some(w)) => {
                let feats: Vec<Var> = self.pairs.iter().map(|&(_, ls)| pass.trace[ls]).collect();
                layer_avg_distill(tape, kt, &feats, &self.student_nhk, cfg.alpha, w)
            }
            _ => {
                let n = g.num_nodes();
                let b = cfg.batch_size.unwrap_or(n);
                let nodes = sample_distill_batch(n, b, self.batch_seed, epoch)?;
                let mut w = weight_matrix(g, cfg.delta, &nodes)?;
                unbias_batch_weights(&mut w, n, b);
                let mut kt = Vec::with_capacity(self.pairs.len());
                let mut feats = Vec::with_capacity(self.pairs.len());
                for (&(lt, ls), k) in self.pairs.iter().zip(&self.teacher_nhk) {
                    kt.push(k.eval(&signals.layers[lt].select_rows(&nodes))?);
                    feats.push(tape.select_rows(pass.trace[ls], &nodes)?);
                }
                layer_avg_distill(tape, &kt, &feats, &self.student_nhk, cfg.alpha, &w)
            }
        }
    }
}

fn kd_term(
    tape: &mut Tape,
    pass: &ForwardPass,
    signals: &TeacherSignals,
    g: &Graph,
    cfg: &DistillConfig,
) -> Result<Option<Var>> {
    if cfg.alpha_kd > 0.0 {
        Ok(Some(kd_soft_label_loss(
            tape,
            &signals.logits,
            pass.logits,
            cfg.tau_kd,
            &g.masks().train,
        )?))
    } else {
        Ok(None)
    }
}

/// Offline geometric distillation from a frozen teacher.
///
/// `remap.new_to_old[i]` names the teacher-graph node of student node `i`.
pub fn train_student_gkd(
    student_graph: &Graph,
    remap: &NodeRemap,
    teacher: &GnnModel,
    teacher_graph: &Graph,
    cfg: &ModelConfig,
    plan: &TrainPlan,
) -> Result<TrainOutcome> {
    plan.validate()?;
    check_remap(student_graph, teacher_graph, remap)?;
    if plan.kernel.is_parametric() {
        return train_student_pgkd(student_graph, remap, teacher, teacher_graph, cfg, plan);
    }
    let model = cfg.build(
        student_graph.feature_dim(),
        student_graph.num_classes(),
        plan.seed,
    )?;
    check_output_width(teacher, &model, &plan.distill)?;
    let signals = TeacherSignals::compute(teacher, teacher_graph, remap)?;
    let guide = if plan.distill.alpha > 0.0 {
        Some(KernelGuide::new(
            &signals,
            teacher,
            &model,
            student_graph,
            plan,
        )?)
    } else {
        None
    };
    let dcfg = plan.distill.clone();
    run_loop(
        student_graph,
        model,
        plan,
        |tape, pass, epoch| {
            let dis = match &guide {
                Some(guide) => {
                    Some(guide.loss(tape, pass, &signals, student_graph, &dcfg, epoch)?)
                }
                None => None,
            };
            let kd = kd_term(tape, pass, &signals, student_graph, &dcfg)?;
            Ok(Extras { dis, kd, rec: None })
        },
        || None,
    )
}

fn check_output_width(teacher: &GnnModel, student: &GnnModel, cfg: &DistillConfig) -> Result<()> {
    if cfg.alpha_kd > 0.0 && teacher.output_dim() != student.output_dim() {
        return Err(GkdError::dim(
            "soft labels",
            teacher.output_dim(),
            student.output_dim(),
        ));
    }
    Ok(())
}

/// `(early, late)` trace indices used for reconstruction: the first and last
/// hidden layers.
pub fn reconstruction_layers(model: &GnnModel) -> Result<(usize, usize)> {
    let l = model.num_layers();
    if l < 2 {
        return Err(GkdError::invalid(
            "layers",
            "parametric distillation needs at least two layers",
        ));
    }
    Ok((1, l - 1))
}

/// Parametric distillation: each epoch takes `distill.mapper_steps` Adam
/// steps on the mapper (reconstruction of teacher and student early features
/// from their late features) followed by one Adam step on the student
/// weights. The logged reconstruction loss is the one before the first
/// mapper step.
pub fn train_student_pgkd(
    student_graph: &Graph,
    remap: &NodeRemap,
    teacher: &GnnModel,
    teacher_graph: &Graph,
    cfg: &ModelConfig,
    plan: &TrainPlan,
) -> Result<TrainOutcome> {
    plan.validate()?;
    check_remap(student_graph, teacher_graph, remap)?;
    let model = cfg.build(
        student_graph.feature_dim(),
        student_graph.num_classes(),
        plan.seed,
    )?;
    check_output_width(teacher, &model, &plan.distill)?;
    let (te, tl) = reconstruction_layers(teacher)?;
    let (se, sl) = reconstruction_layers(&model)?;

    let mut tape = Tape::new();
    let tpass = teacher.forward(&mut tape, teacher_graph, false)?;
    let teacher_early = tape.value(tpass.trace[te]).detached();
    let teacher_late = tape.value(tpass.trace[tl]).detached();
    let signals = TeacherSignals::from_trace(&tape, &tpass, remap);
    drop(tape);

    let d_t = teacher.trace_dim(tl);
    let d_s = model.trace_dim(sl);
    let s = 2 * d_s;
    let shared = d_t == d_s;
    let mapper_seed = plan.seed ^ MAPPER_SEED_SALT;
    let mut phi = vec![InverseNhkMapper::new(d_s, s, mapper_seed).weight];
    if !shared {
        phi.insert(0, InverseNhkMapper::new(d_t, s, mapper_seed ^ 1).weight);
    }
    let mut mapper_adam = Adam::new(plan.mapper_optimizer, &phi);
    let n = student_graph.num_nodes();
    let w_full = match plan.distill.batch_size {
        None => Some(weight_matrix(
            student_graph,
            plan.distill.delta,
            &(0..n).collect::<Vec<_>>(),
        )?),
        Some(b) if b > n => {
            return Err(GkdError::invalid(
                "distill.batch_size",
                format!("{b} exceeds {n} nodes"),
            ));
        }
        Some(_) => None,
    };
    let dcfg = plan.distill.clone();
    let batch_seed = plan.seed ^ BATCH_SEED_SALT;
    let phi_cell = std::cell::RefCell::new(phi);

    run_loop(
        student_graph,
        model,
        plan,
        |tape, pass, epoch| {
            let mut phi = phi_cell.borrow_mut();
            // Mapper step against the current student features.
            let student_early = tape.value(pass.trace[se]).detached();
            let student_late = tape.value(pass.trace[sl]).detached();
            let mut rec = None;
            for _ in 0..dcfg.mapper_steps {
                let value = pgkd_mapper_step(
                    &mut phi,
                    &mut mapper_adam,
                    (&teacher_late, &teacher_early),
                    (&student_late, &student_early),
                )
                .map_err(|e| match e {
                    GkdError::Numeric(_) => {
                        GkdError::Numeric(format!("reconstruction loss at epoch {epoch}"))
                    }
                    other => other,
                })?;
                rec.get_or_insert(value);
            }
            let rec = rec.expect("mapper_steps >= 1");

            let dis = if dcfg.alpha > 0.0 {
                let (phi_t, phi_s) = (&phi[0], phi.last().unwrap());
                let (nodes, w) = match &w_full {
                    Some(w) => (None, w.clone()),
                    None => {
                        let b = dcfg.batch_size.unwrap_or(n);
                        let nodes = sample_distill_batch(n, b, batch_seed, epoch)?;
                        let mut w = weight_matrix(student_graph, dcfg.delta, &nodes)?;
                        unbias_batch_weights(&mut w, n, b);
                        (Some(nodes), w)
                    }
                };
                let t_rows = match &nodes {
                    Some(nodes) => signals.layers[tl].select_rows(nodes),
                    None => signals.layers[tl].clone(),
                };
                let k_teacher = inverse_gram_value(&t_rows, phi_t)?;
                let h = match &nodes {
                    Some(nodes) => tape.select_rows(pass.trace[sl], nodes)?,
                    None => pass.trace[sl],
                };
                let phi_var = tape.constant(phi_s.clone());
                let k_student = inverse_nhk_gram(tape, phi_var, h)?;
                let loss = crate::distill::distill_loss(tape, &k_teacher, k_student, &w)?;
                Some(tape.scale(loss, dcfg.alpha))
            } else {
                None
            };
            let kd = kd_term(tape, pass, &signals, student_graph, &dcfg)?;
            Ok(Extras {
                dis,
                kd,
                rec: Some(rec),
            })
        },
        || {
            let phi = phi_cell.borrow();
            let t = InverseNhkMapper {
                weight: phi[0].clone(),
            };
            let s = InverseNhkMapper {
                weight: phi.last().unwrap().clone(),
            };
            Some((t, s))
        },
    )
}

/// One Adam step of the inverse-kernel mapper on
/// `‖K†_T H_T,late − H_T,early‖² + ‖K†_S H_S,late − H_S,early‖²` with all
/// features held fixed. `phi` holds `[Φ_T, Φ_S]`, or a single shared `Φ`.
/// Features are passed as `(late, early)`. Returns the loss before the step.
pub fn pgkd_mapper_step(
    phi: &mut [Tensor],
    adam: &mut Adam,
    teacher: (&Tensor, &Tensor),
    student: (&Tensor, &Tensor),
) -> Result<f64> {
    if phi.is_empty() || phi.len() > 2 {
        return Err(GkdError::invalid(
            "mapper",
            "expected one shared or two separate mapper weights",
        ));
    }
    let mut et = Tape::new();
    let vars: Vec<Var> = phi.iter().map(|p| et.param(p)).collect();
    let (phi_t, phi_s) = (vars[0], *vars.last().unwrap());
    let (t_late, t_early) = (
        et.constant(teacher.0.clone()),
        et.constant(teacher.1.clone()),
    );
    let kt = inverse_nhk_gram(&mut et, phi_t, t_late)?;
    let rec_t = reconstruction_loss(&mut et, kt, t_late, t_early)?;
    let (s_late, s_early) = (
        et.constant(student.0.clone()),
        et.constant(student.1.clone()),
    );
    let ks = inverse_nhk_gram(&mut et, phi_s, s_late)?;
    let rec_s = reconstruction_loss(&mut et, ks, s_late, s_early)?;
    let rec = et.add(rec_t, rec_s)?;
    let value = et.value(rec).item();
    if !value.is_finite() {
        return Err(GkdError::Numeric("reconstruction loss".into()));
    }
    et.backward(rec)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| et.grad(v).expect("mapper gradient"))
        .collect();
    adam.step(phi, &grads)?;
    Ok(value)
}

fn inverse_gram_value(h: &Tensor, phi: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let pv = tape.constant(phi.clone());
    let k = inverse_nhk_gram(&mut tape, pv, hv)?;
    Ok(tape.value(k).detached())
}

/// Outcome of online distillation: the co-trained teacher and the student.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub teacher: TrainOutcome,
    pub student: TrainOutcome,
}

/// Online distillation: each epoch the teacher takes one supervised step on
/// its graph, then the student takes one step distilling from the teacher
/// features of that epoch (detached).
pub fn train_online(
    student_graph: &Graph,
    remap: &NodeRemap,
    teacher_graph: &Graph,
    teacher_cfg: &ModelConfig,
    student_cfg: &ModelConfig,
    plan: &TrainPlan,
) -> Result<OnlineOutcome> {
    plan.validate()?;
    check_labeled(teacher_graph)?;
    check_labeled(student_graph)?;
    check_remap(student_graph, teacher_graph, remap)?;
    if plan.kernel.is_parametric() {
        return Err(GkdError::invalid(
            "kernel.kind",
            "online distillation uses non-parametric kernels",
        ));
    }
    let mut teacher = teacher_cfg.build(
        teacher_graph.feature_dim(),
        teacher_graph.num_classes(),
        plan.seed,
    )?;
    let student = student_cfg.build(
        student_graph.feature_dim(),
        student_graph.num_classes(),
        plan.seed,
    )?;
    check_output_width(&teacher, &student, &plan.distill)?;
    let teacher_labels = teacher_graph.dense_labels();
    let mut teacher_adam = Adam::new(plan.optimizer, teacher.weights());
    let mut teacher_sel = Selector::new(None);
    let mut teacher_hist = Vec::new();
    let signals0 = TeacherSignals::compute(&teacher, teacher_graph, remap)?;
    let mut guide = if plan.distill.alpha > 0.0 {
        Some(KernelGuide::new(
            &signals0,
            &teacher,
            &student,
            student_graph,
            plan,
        )?)
    } else {
        None
    };
    let dcfg = plan.distill.clone();
    let teacher_state = std::cell::RefCell::new((
        &mut teacher,
        &mut teacher_adam,
        &mut teacher_sel,
        &mut teacher_hist,
    ));

    let student_out = run_loop(
        student_graph,
        student,
        plan,
        |tape, pass, epoch| {
            let mut st = teacher_state.borrow_mut();
            let (teacher, adam, sel, hist) = &mut *st;
            let snapshot = (**teacher).clone();
            let mut signals = None;
            let metrics = supervised_step(
                teacher,
                adam,
                teacher_graph,
                &teacher_labels,
                0.0,
                epoch,
                |tt, tp| {
                    signals = Some(TeacherSignals::from_trace(tt, tp, remap));
                    Ok(Extras::default())
                },
            )?;
            sel.observe(&metrics, &snapshot);
            hist.push(metrics);
            let signals = signals.expect("teacher forward recorded");
            let dis = match guide.as_mut() {
                Some(guide) => {
                    guide.refresh(&signals)?;
                    Some(guide.loss(tape, pass, &signals, student_graph, &dcfg, epoch)?)
                }
                None => None,
            };
            let kd = kd_term(tape, pass, &signals, student_graph, &dcfg)?;
            Ok(Extras { dis, kd, rec: None })
        },
        || None,
    )?;
    drop(teacher_state);
    Ok(OnlineOutcome {
        teacher: teacher_sel.finish(teacher_hist, None),
        student: student_out,
    })
}

/// Self-distillation: a teacher trained on `g` distils into a student of
/// the same architecture on the same graph.
pub fn train_self_distill(g: &Graph, cfg: &ModelConfig, plan: &TrainPlan) -> Result<OnlineOutcome> {
    train_compression(g, cfg, cfg, plan)
}

/// Model compression: a (typically wider) teacher trained on `g` distils
/// into a smaller student on the same graph.
pub fn train_compression(
    g: &Graph,
    teacher_cfg: &ModelConfig,
    student_cfg: &ModelConfig,
    plan: &TrainPlan,
) -> Result<OnlineOutcome> {
    let teacher_plan = TrainPlan {
        seed: plan.seed ^ 0x7EAC,
        ..plan.clone()
    };
    let teacher = train_teacher(g, teacher_cfg, &teacher_plan)?;
    let remap = NodeRemap::identity(g.num_nodes());
    let student = train_student_gkd(g, &remap, &teacher.model, g, student_cfg, plan)?;
    Ok(OnlineOutcome { teacher, student })
}
