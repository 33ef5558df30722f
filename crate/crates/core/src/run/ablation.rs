use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{plot_runs, train, RunConfig, RunError, TrainSummary};
use crate::agent::{AgentConfig, EncoderKind, RoutingScheme};

/// Which grid of runs to launch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationPreset {
    /// The six routing schemes.
    Schemes,
    /// Curiosity scales `0`, `beta0 / 10`, `beta0` and `10 * beta0`.
    Curiosity,
    /// Recurrent encoder against the memoryless pass-through.
    Encoder,
}

impl FromStr for AblationPreset {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "schemes" => Ok(Self::Schemes),
            "curiosity" => Ok(Self::Curiosity),
            "encoder" => Ok(Self::Encoder),
            other => Err(RunError::Usage(format!(
                "unknown ablation preset `{other}` (schemes, curiosity, encoder)"
            ))),
        }
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Schemes => "schemes",
            Self::Curiosity => "curiosity",
            Self::Encoder => "encoder",
        })
    }
}

impl AblationPreset {
    /// Labelled configurations of the grid, before seeds are applied.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Self::Schemes => RoutingScheme::all()
                .map(|(id, s)| (format!("scheme{id}"), with(&|c| c.agent.scheme = s)))
                .collect(),
            Self::Curiosity => {
                let d = if base.agent.beta0 > 0.0 {
                    base.agent.beta0
                } else {
                    AgentConfig::default().beta0
                };
                [0.0, d / 10.0, d, 10.0 * d]
                    .into_iter()
                    .map(|b| (format!("beta0-{b}"), with(&|c| c.agent.beta0 = b)))
                    .collect()
            }
            Self::Encoder => [EncoderKind::Gru, EncoderKind::Memoryless]
                .into_iter()
                .map(|e| (e.to_string(), with(&|c| c.agent.encoder = e)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub result: Result<TrainSummary, String>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub runs: Vec<RunOutcome>,
    pub chart: Option<PathBuf>,
}

impl AblationReport {
    /// Successful summaries of one label, in seed order.
    pub fn label_runs(&self, label: &str) -> Vec<&TrainSummary> {
        self.runs
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.result.as_ref().ok())
            .collect()
    }
}

/// Runs every variant of `preset` for `base.seeds` consecutive seeds
/// starting at `base.seed`, under `root/<label>/seed-<n>`. A failed run is
/// recorded and the grid continues.
pub fn ablation(
    preset: AblationPreset,
    base: &RunConfig,
    root: &Path,
    mut on_run: impl FnMut(&RunOutcome),
) -> Result<AblationReport, RunError> {
    base.validate()?;
    fs::create_dir_all(root).map_err(|e| RunError::io(root, e))?;
    let variants = preset.variants(base);
    let mut runs = Vec::new();
    for (label, cfg) in &variants {
        for i in 0..base.seeds as u64 {
            let seed = base.seed + i;
            let mut c = cfg.clone();
            c.seed = seed;
            let dir = root.join(label).join(format!("seed-{seed}"));
            let result = train(&c, &dir, |_| {}).map_err(|e| e.to_string());
            let outcome = RunOutcome {
                label: label.clone(),
                seed,
                dir,
                result,
            };
            on_run(&outcome);
            runs.push(outcome);
        }
    }

    let mut csv = String::from("label,seed,status,env_steps,final_return,best_return,final_goal_rate,first_goal_step\n");
    let mut failures = String::new();
    for r in &runs {
        match &r.result {
            Ok(s) => {
                let last = s.rows.last();
                let first_goal = s.rows.iter().find(|row| row.eval_goal_rate >= 0.5).map(|row| row.env_step);
                let _ = writeln!(
                    csv,
                    "{},{},ok,{},{},{},{},{}",
                    r.label,
                    r.seed,
                    s.env_steps,
                    s.final_return(),
                    s.best_return(),
                    last.map_or(f64::NAN, |l| l.eval_goal_rate),
                    first_goal.map_or_else(String::new, |v| v.to_string())
                );
            }
            Err(e) => {
                let _ = writeln!(csv, "{},{},failed,,,,,", r.label, r.seed);
                let _ = writeln!(failures, "{}/seed-{}: {e}", r.label, r.seed);
            }
        }
    }
    fs::write(root.join("summary.csv"), csv).map_err(|e| RunError::io(root, e))?;
    if !failures.is_empty() {
        fs::write(root.join("failures.txt"), failures).map_err(|e| RunError::io(root, e))?;
    }
    let groups: Vec<PathBuf> = variants
        .iter()
        .filter(|(l, _)| runs.iter().any(|r| &r.label == l && r.result.is_ok()))
        .map(|(l, _)| root.join(l))
        .collect();
    let chart = if groups.is_empty() {
        None
    } else {
        let path = root.join("comparison.svg");
        plot_runs(&groups, &path, &format!("{} ablation on {}", preset, base.env))?;
        Some(path)
    };
    Ok(AblationReport { runs, chart })
}
