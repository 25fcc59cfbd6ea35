//! Command-line layer: run configuration, file formats, subcommands and
//! self-checks for the geometric distillation toolkit.

pub mod app;
pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

pub use checks::{all_passed, gradient_suite, kernel_suite, CheckReport, KernelCheckOptions};
pub use commands::{
    cmd_distill, cmd_eval, cmd_gen_synthetic, cmd_sweep_pir, cmd_train_teacher, run, EvalReport,
};
pub use config::{Mode, RunConfig, SplitConfig, SplitKind};
pub use output::{MetricsRecord, Summary};
