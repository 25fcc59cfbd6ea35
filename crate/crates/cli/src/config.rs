//! Run configuration: one JSON document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use gkd_core::distill::DistillConfig;
use gkd_core::graph::{load_graph, split_edges, split_nodes, Graph, NodeRemap};
use gkd_core::model::ModelConfig;
use gkd_core::nhk::KernelSpec;
use gkd_core::train::{AdamConfig, TrainPlan};
use gkd_core::{GkdError, Result};
use serde::{Deserialize, Serialize};

/// What a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Supervised model on the complete graph.
    Teacher,
    /// Supervised model on the partial graph, no teacher.
    Student,
    /// Offline distillation through a non-parametric kernel.
    Gkd,
    /// Offline distillation through a learned inverse kernel.
    Pgkd,
    /// Teacher and student trained together.
    Online,
    /// Teacher and student share architecture and graph.
    SelfDistill,
    /// Wider teacher, smaller student, same graph.
    Compression,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Teacher => "teacher",
            Mode::Student => "student",
            Mode::Gkd => "gkd",
            Mode::Pgkd => "pgkd",
            Mode::Online => "online",
            Mode::SelfDistill => "self_distill",
            Mode::Compression => "compression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Drop a fraction of edges.
    Edge,
    /// Drop a fraction of training nodes with their edges.
    Node,
}

/// Derives the partial graph from the complete one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: SplitKind,
    pub pir: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub mapper_lr: f64,
    pub epochs: usize,
    pub patience: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.01,
            mapper_lr: 0.01,
            epochs: 200,
            patience: None,
        }
    }
}

/// One experiment. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Complete graph file.
    pub graph: PathBuf,
    /// Partial graph file with the same node ids as `graph`.
    #[serde(default)]
    pub partial_graph: Option<PathBuf>,
    /// Partial graph derived from `graph`; exclusive with `partial_graph`.
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub teacher: ModelConfig,
    #[serde(default)]
    pub student: ModelConfig,
    /// Frozen teacher weights for offline modes.
    #[serde(default)]
    pub teacher_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Add per-epoch wall time to metrics records.
    #[serde(default)]
    pub timing: bool,
}

/// Graphs a run operates on.
#[derive(Debug, Clone)]
pub struct Graphs {
    pub complete: Graph,
    pub partial: Graph,
    /// Partial-graph node `i` is complete-graph node `remap.new_to_old[i]`.
    pub remap: NodeRemap,
}

impl RunConfig {
    /// Minimal configuration for `mode` on `graph`, everything else default.
    pub fn new(mode: Mode, graph: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            graph: graph.into(),
            partial_graph: None,
            split: None,
            teacher: ModelConfig::default(),
            student: ModelConfig::default(),
            teacher_checkpoint: None,
            kernel: KernelSpec::default(),
            distill: DistillConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            out: None,
            timing: false,
        }
    }

    /// Parses a config document; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(GkdError::from_json)?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.graph);
        cfg.partial_graph.as_mut().map(resolve);
        cfg.teacher_checkpoint.as_mut().map(resolve);
        cfg.out.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| GkdError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Checks every referenced file and numeric range, before any compute.
    pub fn validate(&self) -> Result<()> {
        require_file("graph", &self.graph)?;
        if let Some(p) = &self.partial_graph {
            require_file("partial_graph", p)?;
        }
        if self.partial_graph.is_some() && self.split.is_some() {
            return Err(GkdError::invalid(
                "split",
                "give either partial_graph or split, not both",
            ));
        }
        if let Some(split) = &self.split {
            if !(0.0..=1.0).contains(&split.pir) {
                return Err(GkdError::invalid(
                    "split.pir",
                    format!("{} must lie in [0, 1]", split.pir),
                ));
            }
        }
        if matches!(self.mode, Mode::Gkd | Mode::Pgkd) {
            match &self.teacher_checkpoint {
                None => {
                    return Err(GkdError::invalid(
                        "teacher_checkpoint",
                        format!(
                            "{} mode needs a trained teacher checkpoint",
                            self.mode.name()
                        ),
                    ))
                }
                Some(p) => require_file("teacher_checkpoint", p)?,
            }
        }
        if self.mode == Mode::Gkd && self.kernel.is_parametric() {
            return Err(GkdError::invalid(
                "kernel.kind",
                "gkd mode uses a non-parametric kernel; use mode pgkd",
            ));
        }
        self.teacher.validate("teacher")?;
        self.student.validate("student")?;
        self.plan().validate()
    }

    /// Training plan described by this config.
    pub fn plan(&self) -> TrainPlan {
        let kernel = if self.mode == Mode::Pgkd {
            KernelSpec::Parametric
        } else {
            self.kernel.clone()
        };
        TrainPlan {
            epochs: self.optimizer.epochs,
            seed: self.seed,
            patience: self.optimizer.patience,
            optimizer: AdamConfig::with_lr(self.optimizer.lr),
            mapper_optimizer: AdamConfig::with_lr(self.optimizer.mapper_lr),
            kernel,
            distill: self.distill.clone(),
            record_time: self.timing,
        }
    }

    /// Loads the complete graph and builds or loads the partial one.
    pub fn graphs(&self) -> Result<Graphs> {
        let complete = load_graph(&self.graph)?;
        let (partial, remap) = match (&self.partial_graph, &self.split) {
            (Some(path), _) => {
                let partial = load_graph(path)?;
                if partial.num_nodes() != complete.num_nodes() {
                    return Err(GkdError::invalid(
                        "partial_graph",
                        format!(
                            "{} nodes but the complete graph has {}; node-dropping splits must use `split`",
                            partial.num_nodes(),
                            complete.num_nodes()
                        ),
                    ));
                }
                (partial, NodeRemap::identity(complete.num_nodes()))
            }
            (None, Some(split)) => partial_from_split(&complete, split)?,
            (None, None) => (complete.clone(), NodeRemap::identity(complete.num_nodes())),
        };
        Ok(Graphs {
            complete,
            partial,
            remap,
        })
    }
}

/// Applies a split to the complete graph.
pub fn partial_from_split(complete: &Graph, split: &SplitConfig) -> Result<(Graph, NodeRemap)> {
    match split.kind {
        SplitKind::Edge => Ok((
            split_edges(complete, split.pir, split.seed)?,
            NodeRemap::identity(complete.num_nodes()),
        )),
        SplitKind::Node => split_nodes(complete, split.pir, split.seed),
    }
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(GkdError::invalid(
            field,
            format!("file {} does not exist", path.display()),
        ))
    }
}
