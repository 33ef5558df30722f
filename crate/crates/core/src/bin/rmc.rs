use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rmc::envs::EnvKind;
use rmc::run::{self, AblationPreset, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "rmc", version, about = "Recurrent model-based actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file (`key = value`, optional `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: pendulum, pointmass or pointmass-sparse.
    #[arg(long)]
    env: Option<String>,
    /// Gradient routing scheme, 1..6.
    #[arg(long)]
    scheme: Option<u8>,
    /// Probability that an observation is replaced by zeros.
    #[arg(long)]
    flicker_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Initial curiosity scale.
    #[arg(long)]
    beta0: Option<f64>,
    /// Output directory. Defaults to a directory under $RMC_OUT (or `runs`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (a run's `checkpoint/`).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Fully observed return used for normalization; defaults to the
        /// checkpoint's own p=0 evaluation.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Evaluate a checkpoint across flicker probabilities.
    SweepPomdp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        probs: Vec<f64>,
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Train a grid of configurations over several seeds.
    Ablation {
        /// schemes, curiosity or encoder.
        preset: String,
        #[command(flatten)]
        common: Common,
        /// Seeds per configuration.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Learning curves of run directories (or groups of seed runs) as SVG.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "eval return")]
        title: String,
    },
}

fn run_config(common: &Common) -> Result<RunConfig, RunError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(v) = &common.env {
        flags.push(("env", v.clone()));
    }
    if let Some(v) = common.scheme {
        flags.push(("scheme", v.to_string()));
    }
    if let Some(v) = common.flicker_p {
        flags.push(("flicker_p", v.to_string()));
    }
    if let Some(v) = common.seed {
        flags.push(("seed", v.to_string()));
    }
    if let Some(v) = common.steps {
        flags.push(("steps", v.to_string()));
    }
    if let Some(v) = common.beta0 {
        flags.push(("beta0", v.to_string()));
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| RunError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.push((k.trim(), v.trim().to_string()));
    }
    for (key, value) in flags {
        cfg.set(key, &value)
            .map_err(|m| RunError::Usage(format!("--{}: {m}", key.replace('_', "-"))))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn env_flag(common: &Common) -> Result<Option<EnvKind>, RunError> {
    common
        .env
        .as_deref()
        .map(|e| e.parse::<EnvKind>().map_err(RunError::from))
        .transpose()
}

/// Where eval outputs go by default: the run directory holding the checkpoint.
fn beside(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "undefined".into(), |v| format!("{v:.3}"))
}

fn execute(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Train { common } => {
            let cfg = run_config(&common)?;
            let dir = common
                .out
                .clone()
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| run::output_root().join(run::run_dir_name(&cfg)));
            println!("training into {}", dir.display());
            let summary = run::train(&cfg, &dir, |row| {
                println!(
                    "step {:>7}  return {:>9.2}  alpha {:.4}  beta {:.4}",
                    row.env_step, row.episode_return, row.alpha, row.beta
                );
            })?;
            println!(
                "done after {} steps{}; final eval return {:.2}",
                summary.env_steps,
                if summary.stopped_early { " (target reached)" } else { "" },
                summary.final_return()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
            reference,
        } => {
            let cfg = run_config(&common)?;
            let out = common.out.clone().unwrap_or_else(|| beside(&checkpoint));
            let s = run::eval_checkpoint(
                &checkpoint,
                env_flag(&common)?,
                cfg.flicker_p,
                episodes,
                cfg.seed,
                reference.or(cfg.reference_return),
                Some(&out),
            )?;
            println!(
                "{} p={}: mean {:.2} std {:.2} over {} episodes; normalized score {}",
                s.env,
                s.flicker_p,
                s.mean_return,
                s.std_return,
                s.episodes,
                fmt_score(s.normalized_score)
            );
            println!("wrote {}", out.join("eval.json").display());
        }
        Command::SweepPomdp {
            common,
            checkpoint,
            episodes,
            probs,
            reference,
        } => {
            let cfg = run_config(&common)?;
            let out = common.out.clone().unwrap_or_else(|| beside(&checkpoint).join("sweep"));
            let points = run::sweep_pomdp(
                &checkpoint,
                env_flag(&common)?,
                &probs,
                episodes,
                cfg.seed,
                reference.or(cfg.reference_return),
                &out,
            )?;
            for p in points {
                println!(
                    "p={:<4} mean {:>9.2} std {:>8.2} score {}",
                    p.flicker_p,
                    p.mean_return,
                    p.std_return,
                    fmt_score(p.normalized_score)
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Ablation { preset, common, seeds } => {
            let preset: AblationPreset = preset.parse()?;
            let mut cfg = run_config(&common)?;
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            let root = common
                .out
                .clone()
                .unwrap_or_else(|| run::output_root().join(format!("ablation-{preset}-{}", cfg.env)));
            let report = run::ablation(preset, &cfg, &root, |r| match &r.result {
                Ok(s) => println!("{} seed {}: final return {:.2}", r.label, r.seed, s.final_return()),
                Err(e) => eprintln!("{} seed {}: failed: {e}", r.label, r.seed),
            })?;
            println!("wrote {}", root.display());
            if report.runs.iter().any(|r| r.result.is_err()) {
                return Err(RunError::Usage(format!(
                    "some runs failed; see {}",
                    root.join("failures.txt").display()
                )));
            }
        }
        Command::Plot { runs, common, title } => {
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| run::output_root().join("curves.svg"));
            run::plot_runs(&runs, &out, &title)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
