//! Exhaustive hyperparameter search selected on validation accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{GkdError, Result};
use crate::nhk::KernelSpec;

use super::TrainPlan;

/// A tunable field of [`TrainPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Kernel time scale (Gauss or randomized kernels).
    T,
    Alpha,
    AlphaKd,
    TauKd,
    Delta,
    Lr,
    MapperLr,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::T => "t",
            Axis::Alpha => "alpha",
            Axis::AlphaKd => "alpha_kd",
            Axis::TauKd => "tau_kd",
            Axis::Delta => "delta",
            Axis::Lr => "lr",
            Axis::MapperLr => "mapper_lr",
        }
    }

    fn apply(self, plan: &mut TrainPlan, value: f64) -> Result<()> {
        match self {
            Axis::T => match &mut plan.kernel {
                KernelSpec::Gauss { t } | KernelSpec::Randomized { t, .. } => *t = value,
                other => {
                    return Err(GkdError::invalid(
                        "grid.t",
                        format!("kernel {other:?} has no time scale"),
                    ));
                }
            },
            Axis::Alpha => plan.distill.alpha = value,
            Axis::AlphaKd => plan.distill.alpha_kd = value,
            Axis::TauKd => plan.distill.tau_kd = value,
            Axis::Delta => plan.distill.delta = value,
            Axis::Lr => plan.optimizer.lr = value,
            Axis::MapperLr => plan.mapper_optimizer.lr = value,
        }
        Ok(())
    }
}

/// Cartesian product of per-axis value lists; the first axis varies slowest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub axes: Vec<(Axis, Vec<f64>)>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, axis: Axis, values: &[f64]) -> Self {
        self.axes.push((axis, values.to_vec()));
        self
    }

    /// The full tuning grid used for the benchmark experiments.
    pub fn full() -> Self {
        SearchSpace::new()
            .with(Axis::T, &[0.25, 0.5, 1.0, 2.0, 4.0])
            .with(
                Axis::Alpha,
                &[0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0],
            )
            .with(Axis::AlphaKd, &[0.0, 0.2, 0.4, 0.6, 0.8])
            .with(Axis::TauKd, &[0.25, 0.5, 1.0, 2.0, 4.0])
            .with(Axis::Delta, &[0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0])
            .with(Axis::Lr, &[1e-4, 1e-3, 1e-2, 1e-1])
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values of grid point `index` in lexicographic order.
    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, (_, values)) in self.axes.iter().enumerate().rev() {
            out[k] = values[index % values.len()];
            index /= values.len();
        }
        out
    }

    /// `template` with the values of one grid point substituted.
    pub fn apply(&self, template: &TrainPlan, point: &[f64]) -> Result<TrainPlan> {
        let mut plan = template.clone();
        for ((axis, _), &v) in self.axes.iter().zip(point) {
            axis.apply(&mut plan, v)?;
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub values: Vec<f64>,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub axes: Vec<Axis>,
    pub rows: Vec<GridRow>,
    pub best_index: usize,
    pub best_plan: TrainPlan,
}

impl GridResult {
    pub fn best(&self) -> &GridRow {
        &self.rows[self.best_index]
    }

    /// Column names: axis names followed by `val_acc,test_acc`.
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.axes.iter().map(|a| a.name().to_string()).collect();
        h.push("val_acc".into());
        h.push("test_acc".into());
        h
    }
}

/// Evaluates every grid point with `eval(plan) -> (val_acc, test_acc)` and
/// selects the highest validation accuracy; ties go to the earliest point.
pub fn grid_search<F>(space: &SearchSpace, template: &TrainPlan, mut eval: F) -> Result<GridResult>
where
    F: FnMut(&TrainPlan) -> Result<(f64, f64)>,
{
    if space.is_empty() {
        return Err(GkdError::invalid("grid", "search space is empty"));
    }
    let mut rows = Vec::with_capacity(space.len());
    let mut best: Option<(usize, TrainPlan)> = None;
    for i in 0..space.len() {
        let values = space.point(i);
        let plan = space.apply(template, &values)?;
        let (val_acc, test_acc) = eval(&plan)?;
        if best
            .as_ref()
            .is_none_or(|(b, _)| val_acc > rows_val(&rows, *b))
        {
            best = Some((i, plan));
        }
        rows.push(GridRow {
            values,
            val_acc,
            test_acc,
        });
    }
    let (best_index, best_plan) = best.expect("nonempty grid");
    Ok(GridResult {
        axes: space.axes.iter().map(|(a, _)| *a).collect(),
        rows,
        best_index,
        best_plan,
    })
}

fn rows_val(rows: &[GridRow], i: usize) -> f64 {
    rows[i].val_acc
}
