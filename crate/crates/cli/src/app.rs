//! Argument parsing and subcommand dispatch of the `gkd` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gkd_core::graph::SbmParams;
use gkd_core::GkdError;

use crate::config::RunConfig;
use crate::{checks, commands};

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_CHECK_FAILED: u8 = 2;

/// Geometric knowledge distillation for graph neural networks.
#[derive(Parser)]
#[command(name = "gkd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model graph file.
    GenSynthetic {
        /// Comma-separated block sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 100, 100, 100])]
        blocks: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output graph file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a teacher on the complete graph.
    TrainTeacher(RunArgs),
    /// Train a student (plain, gkd, pgkd, online, self_distill or compression).
    Distill(RunArgs),
    /// Report accuracies of a checkpoint on a graph.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        graph: PathBuf,
    },
    /// Compare oracle, teacher, student and distilled student across PIR values.
    SweepPir {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated privileged-information ratios.
        #[arg(long, value_delimiter = ',', required = true)]
        pir: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
    },
    /// Check heat-kernel identities on seeded random graphs.
    ValidateKernels {
        #[arg(long, default_value_t = 5)]
        graphs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the kernel antisymmetrically by this amount (fault injection).
        #[arg(long)]
        inject_skew: Option<f64>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

enum Failure {
    Invalid(GkdError),
    Check,
}

impl From<GkdError> for Failure {
    fn from(e: GkdError) -> Self {
        Failure::Invalid(e)
    }
}

fn load(args: &RunArgs) -> Result<RunConfig, GkdError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises")
}

fn report(out: &mut dyn Write, reports: &[checks::CheckReport]) -> Result<(), Failure> {
    for r in reports {
        output_line(out, &r.line());
    }
    if checks::all_passed(reports) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

/// Writes a line, ignoring a closed stream (e.g. stdout piped into `head`).
fn output_line(out: &mut dyn Write, line: &str) {
    let _ = writeln!(out, "{line}");
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::GenSynthetic {
            blocks,
            p_in,
            p_out,
            feature_dim,
            noise_sigma,
            seed,
            out: path,
        } => {
            let params = SbmParams {
                blocks,
                p_in,
                p_out,
                feature_dim,
                noise_sigma,
                seed,
            };
            let g = commands::cmd_gen_synthetic(&params, &path)?;
            output_line(
                out,
                &format!(
                    "wrote {} ({} nodes, {} edges)",
                    path.display(),
                    g.num_nodes(),
                    g.num_edges()
                ),
            );
        }
        Command::TrainTeacher(args) => {
            output_line(out, &json(&commands::cmd_train_teacher(&load(&args)?)?))
        }
        Command::Distill(args) => output_line(out, &json(&commands::cmd_distill(&load(&args)?)?)),
        Command::Eval { checkpoint, graph } => {
            output_line(out, &json(&commands::cmd_eval(&checkpoint, &graph)?))
        }
        Command::SweepPir { run, pir, seeds } => {
            let rows = commands::cmd_sweep_pir(&load(&run)?, &pir, &seeds)?;
            for r in rows {
                output_line(
                    out,
                    &format!(
                        "pir={:<5} {:<10} mean={:.4} std={:.4}",
                        r.pir, r.method, r.mean_acc, r.std_acc
                    ),
                );
            }
        }
        Command::ValidateKernels {
            graphs,
            seed,
            inject_skew,
        } => {
            let opts = checks::KernelCheckOptions {
                graphs,
                seed,
                skew: inject_skew,
            };
            report(out, &checks::kernel_suite(&opts)?)?;
        }
        Command::Gradcheck => report(out, &checks::gradient_suite()?)?,
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand, writing
/// normal output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let _ = write!(err, "{e}");
            return EXIT_INVALID;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INVALID
        }
        Err(Failure::Check) => {
            let _ = writeln!(err, "one or more checks failed");
            EXIT_CHECK_FAILED
        }
    }
}
