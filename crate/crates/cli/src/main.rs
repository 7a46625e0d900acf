//! `ebmlab`: train, sample from and evaluate score-based energy models.
//!
//! Exit codes: 0 success, 1 a gated metric failed, 2 usage or config error,
//! 3 numerical abort.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ebmlab_core::{LossKind, Method, Schedule, StepParams};
use serde_json::Value;

use config::{RunConfig, Sources, Suite, OUT_ENV};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ebmlab", version, about = "Train, sample from and evaluate score-based energy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; a run's resolved `config.json` reproduces it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for initialisation, negatives, batches and sampler noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $EBMLAB_OUT, else ./ebmlab-out].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics and the resolved config.
    Train {
        #[command(flatten)]
        common: Common,
        /// nce, sm, ssm, delta or fm.
        #[arg(long)]
        loss: Option<LossKind>,
        /// analytic (energy network) or predictive (score network).
        #[arg(long, value_name = "PATH")]
        score_path: Option<String>,
        /// conditional, mixture or gaussian.
        #[arg(long)]
        task: Option<String>,
        /// Optimiser steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint that carries optimiser state.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Refine starting points with a trained score.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Trained model [default: the config's checkpoint key].
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// langevin, denoise or one-step.
        #[arg(long)]
        method: Option<Method>,
        /// Refinement steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Langevin step size.
        #[arg(long)]
        rho: Option<f64>,
        /// Denoise scaling (default 1).
        #[arg(long)]
        alpha: Option<f64>,
        /// Denoise step size (default rho).
        #[arg(long)]
        beta: Option<f64>,
        /// Denoise noise scale (default 0).
        #[arg(long)]
        sigma: Option<f64>,
        /// CSV of starting points, condition columns first.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Number of chains when starting from noise.
        #[arg(long)]
        n: Option<usize>,
        /// Also write every recorded iterate.
        #[arg(long)]
        trajectory: bool,
    },
    /// Run evaluation suites on a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Trained model [default: the config's checkpoint key].
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Comma list of gradcheck, hutchinson, step-sweep, score-field, energy.
        #[arg(long, value_delimiter = ',')]
        suite: Vec<Suite>,
        /// Hutchinson projection draws.
        #[arg(long)]
        draws: Option<usize>,
        /// Step counts for the step sweep, e.g. 0,1,10,50,100.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        /// Langevin step size for the step sweep.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Check score and loss gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Defaults to a fresh initialisation from the config.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Finite-difference step.
        #[arg(long)]
        h: Option<f64>,
        /// Maximum relative error.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn json<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("flag values serialise")
}

fn path_flag(key: &'static str, path: Option<PathBuf>) -> Vec<(&'static str, Value)> {
    path.map(|p| (key, json(p))).into_iter().collect()
}

fn resolve(common: &Common, flags: Vec<(&'static str, Value)>) -> CliResult<RunConfig> {
    let cfg = resolve_unchecked(common, flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_unchecked(common: &Common, flags: Vec<(&'static str, Value)>) -> CliResult<RunConfig> {
    RunConfig::resolve(Sources {
        file: common.config.as_deref(),
        sets: &common.sets,
        flags,
        seed: common.seed,
        out: common.out.clone(),
        threads: common.threads,
        env_out: std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    })
}

fn task_flags(task: &str) -> CliResult<Vec<(&'static str, Value)>> {
    let dist = |d: ebmlab_core::SyntheticDistribution| vec![("data.kind", json("distribution")), ("data.distribution", json(d))];
    Ok(match task {
        "conditional" => vec![("data.kind", json("conditional"))],
        "mixture" => dist(ebmlab_core::SyntheticDistribution::bimodal(vec![2.0, 0.0])),
        "gaussian" => dist(ebmlab_core::SyntheticDistribution::gaussian(vec![0.0, 0.0], 1.0)?),
        other => {
            return Err(CliError::usage(format!(
                "--task {other:?}: expected conditional, mixture or gaussian"
            )))
        }
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            common,
            loss,
            score_path,
            task,
            steps,
            lr,
            resume,
        } => {
            let mut flags = path_flag("resume", resume);
            if let Some(t) = task {
                flags.extend(task_flags(&t)?);
            }
            if let Some(l) = loss {
                flags.push(("train.loss", json(l)));
            }
            if let Some(p) = score_path {
                flags.push(("train.score_path", json(p)));
            }
            if let Some(s) = steps {
                flags.push(("train.steps", json(s)));
            }
            if let Some(v) = lr {
                flags.push(("train.lr", json(v)));
            }
            let cfg = resolve(&common, flags)?;
            commands::train(&cfg)
        }
        Command::Sample {
            common,
            checkpoint,
            method,
            steps,
            rho,
            alpha,
            beta,
            sigma,
            input,
            n,
            trajectory,
        } => {
            let mut flags = path_flag("checkpoint", checkpoint);
            if let Some(m) = method {
                flags.push(("sampler.method", json(m)));
            }
            if let Some(s) = steps {
                flags.push(("sampler.steps", json(s)));
            }
            if let Some(r) = rho {
                flags.push(("sampler.rho", json(r)));
            }
            if let Some(p) = input {
                flags.push(("sample.input", json(p)));
            }
            if let Some(n) = n {
                flags.push(("sample.n", json(n)));
            }
            if trajectory {
                flags.push(("sample.trajectory", json(true)));
            }
            let mut cfg = resolve_unchecked(&common, flags)?;
            if alpha.or(beta).or(sigma).is_some() {
                if cfg.sampler.method != Method::Denoise {
                    return Err(CliError::usage("--alpha, --beta and --sigma need --method denoise"));
                }
                cfg.sampler.schedule = Some(Schedule::Constant(StepParams {
                    alpha: alpha.unwrap_or(1.0),
                    beta: beta.unwrap_or(cfg.sampler.rho),
                    sigma: sigma.unwrap_or(0.0),
                }));
            }
            cfg.validate()?;
            commands::sample(&cfg)
        }
        Command::Eval {
            common,
            checkpoint,
            suite,
            draws,
            steps,
            rho,
        } => {
            let mut flags = path_flag("checkpoint", checkpoint);
            if !suite.is_empty() {
                flags.push(("eval.suites", json(suite)));
            }
            if let Some(d) = draws {
                flags.push(("eval.draws", json(d)));
            }
            if !steps.is_empty() {
                flags.push(("eval.steps", json(steps)));
            }
            if let Some(r) = rho {
                flags.push(("eval.sweep_rho", json(r)));
            }
            let cfg = resolve(&common, flags)?;
            commands::eval(&cfg)
        }
        Command::Gradcheck {
            common,
            checkpoint,
            h,
            tol,
        } => {
            let mut flags = path_flag("checkpoint", checkpoint);
            if let Some(h) = h {
                flags.push(("eval.h", json(h)));
            }
            if let Some(t) = tol {
                flags.push(("eval.grad_tol", json(t)));
            }
            let cfg = resolve(&common, flags)?;
            commands::gradcheck(&cfg)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help and --version
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
