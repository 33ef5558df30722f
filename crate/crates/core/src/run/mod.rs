//! Experiment drivers behind the `rmc` commands: training runs, checkpoint
//! evaluation, flicker sweeps, ablation grids and learning-curve plots.

mod ablation;
mod config;
mod evaluate;
mod train;

pub use ablation::{ablation, AblationPreset, AblationReport, RunOutcome};
pub use config::{ConfigError, RunConfig};
pub use evaluate::{eval_checkpoint, sweep_pomdp, EvalSummary, SweepPoint};
pub use train::{eval_seed, evaluate_run, read_metrics, train, MetricsRow, TrainSummary, METRICS_HEADER};

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::AgentError;
use crate::envs::EnvError;
use crate::plot::{self, Chart};
use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Output root: `RMC_OUT` when set, else `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("RMC_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Default run directory for a training config under `root`.
pub fn run_dir_name(cfg: &RunConfig) -> String {
    format!(
        "{}-p{}-scheme{}-{}-seed{}",
        cfg.env,
        cfg.flicker_p,
        cfg.agent.scheme.id().unwrap_or(0),
        cfg.agent.encoder,
        cfg.seed
    )
}

/// Metrics files of a run group: `dir/metrics.csv` itself, or one per
/// immediate subdirectory holding one.
pub fn group_metrics(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| RunError::io(dir, e))?;
    for entry in entries {
        let p = entry.map_err(|e| RunError::io(dir, e))?.path().join("metrics.csv");
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(RunError::Metrics(format!("{}: no metrics.csv found", dir.display())));
    }
    Ok(found)
}

/// Learning curves (eval return against env steps) for each run group, with
/// a min..max band across the group's seeds. Writes the SVG to `out`.
pub fn plot_runs(groups: &[PathBuf], out: &Path, title: &str) -> Result<Chart, RunError> {
    if groups.is_empty() {
        return Err(RunError::Usage("plot needs at least one run directory".into()));
    }
    let mut series = Vec::new();
    for g in groups {
        let mut runs = Vec::new();
        for path in group_metrics(g)? {
            let rows = read_metrics(&path)?;
            runs.push(rows.iter().map(|r| (r.env_step as f64, r.episode_return)).collect::<Vec<_>>());
        }
        let label = g.file_name().map_or_else(|| g.display().to_string(), |n| n.to_string_lossy().into_owned());
        series.push(plot::aggregate(&label, &runs));
    }
    let chart = Chart {
        title: title.to_string(),
        x_label: "env_step".into(),
        y_label: "eval return".into(),
        series,
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| RunError::io(parent, e))?;
    }
    fs::write(out, plot::render_svg(&chart)).map_err(|e| RunError::io(out, e))?;
    Ok(chart)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;

    #[test]
    fn eval_and_sweep_from_a_trained_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = train::tests::tiny_config();
        train(&cfg, dir.path(), |_| {}).unwrap();
        let ck = dir.path().join("checkpoint");

        // env is read back from the run's config echo
        let s = eval_checkpoint(&ck, None, 0.0, 2, 3, Some(-100.0), Some(dir.path())).unwrap();
        assert_eq!(s.env, "pendulum");
        assert_eq!(s.returns.len(), 2);
        assert!(dir.path().join("eval.json").is_file());

        let err = eval_checkpoint(&ck, Some(EnvKind::PointMass), 0.0, 1, 0, None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pointmass"), "{msg}");

        let out = dir.path().join("sweep");
        let pts = sweep_pomdp(&ck, None, &[0.0, 0.5], 1, 0, None, &out).unwrap();
        assert_eq!(pts.len(), 2);
        let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        roxmltree::Document::parse(&fs::read_to_string(out.join("sweep.svg")).unwrap()).unwrap();
        assert!(sweep_pomdp(&ck, None, &[1.5], 1, 0, None, &out).is_err());
    }

    #[test]
    fn encoder_ablation_grid() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = train::tests::tiny_config();
        base.seeds = 2;
        base.agent.total_steps = 120;
        let mut n = 0;
        let report = ablation(AblationPreset::Encoder, &base, dir.path(), |_| n += 1).unwrap();
        assert_eq!(n, 4);
        assert_eq!(report.label_runs("gru").len(), 2);
        assert_eq!(report.label_runs("memoryless").len(), 2);
        assert!(dir.path().join("memoryless/seed-1/metrics.csv").is_file());
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 5);
        let svg = fs::read_to_string(report.chart.unwrap()).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
    }

    #[test]
    fn curiosity_grid_scales_beta() {
        let mut base = RunConfig::default();
        base.agent.beta0 = 0.2;
        let betas: Vec<f64> = AblationPreset::Curiosity
            .variants(&base)
            .iter()
            .map(|(_, c)| c.agent.beta0)
            .collect();
        assert_eq!(betas, vec![0.0, 0.2 / 10.0, 0.2, 10.0 * 0.2]);
        assert_eq!(AblationPreset::Schemes.variants(&base).len(), 6);
        assert!("nope".parse::<AblationPreset>().is_err());
    }

    #[test]
    fn plot_needs_metrics() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_runs(&[dir.path().to_path_buf()], &dir.path().join("x.svg"), "t").is_err());
        assert!(plot_runs(&[], &dir.path().join("x.svg"), "t").is_err());
    }
}
