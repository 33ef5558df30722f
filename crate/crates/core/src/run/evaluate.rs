use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{RunConfig, RunError};
use crate::agent::{checkpoint, evaluate, Agent, AgentError};
use crate::envs::{normalized_score, random_policy_returns, Env, EnvKind};
use crate::plot::{self, Chart, Series};
use crate::stats;

/// Episodes used to estimate the uniform-random baseline.
const RANDOM_EPISODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub env: String,
    pub flicker_p: f64,
    pub episodes: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
    pub random_return: f64,
    pub reference_return: f64,
    /// `None` when the reference does not beat the random baseline.
    pub normalized_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub flicker_p: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub normalized_score: Option<f64>,
}

fn load_for(dir: &Path, env: Option<EnvKind>) -> Result<(Agent, EnvKind), RunError> {
    let (agent, manifest) = checkpoint::load(dir)?;
    // the run's config echo names the env when none is given
    let echoed = dir
        .parent()
        .map(|p| p.join("config.txt"))
        .and_then(|p| RunConfig::from_file(&p).ok())
        .map(|c| c.env);
    let kind = env.or(echoed).unwrap_or(match (manifest.obs_dim, manifest.action_dim) {
        (6, 2) => EnvKind::PointMass,
        _ => EnvKind::Pendulum,
    });
    for (what, ck, ev) in [
        ("observation dim", agent.obs_dim(), kind.obs_dim()),
        ("action dim", agent.action_dim(), kind.action_dim()),
    ] {
        if ck != ev {
            return Err(AgentError::DimMismatch {
                what,
                checkpoint: ck,
                env_name: kind.to_string(),
                env: ev,
            }
            .into());
        }
    }
    Ok((agent, kind))
}

fn returns(agent: &Agent, kind: EnvKind, p: f64, episodes: usize, seed: u64) -> Result<Vec<f64>, RunError> {
    let mut env = Env::new(kind, seed, p)?;
    Ok(evaluate(agent, &mut env, episodes)?.iter().map(|e| e.ret).collect())
}

/// Baselines for normalization: the random-policy mean, and the reference
/// return (given, or this checkpoint evaluated fully observed).
fn baselines(agent: &Agent, kind: EnvKind, episodes: usize, seed: u64, reference: Option<f64>) -> Result<(f64, f64), RunError> {
    let random = stats::mean(&random_policy_returns(kind, RANDOM_EPISODES, seed)?);
    let reference = match reference {
        Some(r) => r,
        None => stats::mean(&returns(agent, kind, 0.0, episodes, seed)?),
    };
    Ok((random, reference))
}

/// Deterministic rollouts of a checkpoint. Writes `eval.json` into `out`
/// when given.
pub fn eval_checkpoint(
    dir: &Path,
    env: Option<EnvKind>,
    flicker_p: f64,
    episodes: usize,
    seed: u64,
    reference: Option<f64>,
    out: Option<&Path>,
) -> Result<EvalSummary, RunError> {
    if episodes == 0 {
        return Err(RunError::Usage("episodes must be at least 1".into()));
    }
    let (agent, kind) = load_for(dir, env)?;
    let rets = returns(&agent, kind, flicker_p, episodes, seed)?;
    let (random, reference) = baselines(&agent, kind, episodes, seed, reference)?;
    let mean = stats::mean(&rets);
    let summary = EvalSummary {
        env: kind.to_string(),
        flicker_p,
        episodes,
        seed,
        mean_return: mean,
        std_return: stats::std_dev(&rets),
        returns: rets,
        random_return: random,
        reference_return: reference,
        normalized_score: normalized_score(mean, random, reference).ok(),
    };
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| RunError::io(out, e))?;
        let json = serde_json::to_string_pretty(&summary).expect("plain data serializes");
        fs::write(out.join("eval.json"), json).map_err(|e| RunError::io(out, e))?;
    }
    Ok(summary)
}

/// Evaluates a checkpoint at every flicker probability in `probs`, writing
/// `sweep.csv` and `sweep.svg` into `out`.
pub fn sweep_pomdp(
    dir: &Path,
    env: Option<EnvKind>,
    probs: &[f64],
    episodes: usize,
    seed: u64,
    reference: Option<f64>,
    out: &Path,
) -> Result<Vec<SweepPoint>, RunError> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(RunError::Usage(format!("flicker probability {p} outside [0, 1]")));
    }
    if probs.is_empty() || episodes == 0 {
        return Err(RunError::Usage("sweep needs probabilities and at least 1 episode".into()));
    }
    let (agent, kind) = load_for(dir, env)?;
    let (random, reference) = baselines(&agent, kind, episodes, seed, reference)?;
    let mut points = Vec::with_capacity(probs.len());
    for &p in probs {
        let rets = returns(&agent, kind, p, episodes, seed)?;
        let mean = stats::mean(&rets);
        points.push(SweepPoint {
            flicker_p: p,
            mean_return: mean,
            std_return: stats::std_dev(&rets),
            normalized_score: normalized_score(mean, random, reference).ok(),
        });
    }
    fs::create_dir_all(out).map_err(|e| RunError::io(out, e))?;
    let mut csv = String::from("flicker_p,mean_return,std_return,normalized_score\n");
    for pt in &points {
        let score = pt.normalized_score.map_or_else(|| "NaN".to_string(), |s| s.to_string());
        let _ = writeln!(csv, "{},{},{},{}", pt.flicker_p, pt.mean_return, pt.std_return, score);
    }
    fs::write(out.join("sweep.csv"), csv).map_err(|e| RunError::io(out, e))?;
    let chart = Chart {
        title: format!("{kind}: score under flickering observations"),
        x_label: "flicker probability".into(),
        y_label: "normalized score".into(),
        series: vec![Series {
            label: dir.file_name().map_or("checkpoint".into(), |n| n.to_string_lossy().into_owned()),
            x: points.iter().map(|p| p.flicker_p).collect(),
            y: points.iter().map(|p| p.normalized_score.unwrap_or(f64::NAN)).collect(),
            band: None,
        }],
    };
    fs::write(out.join("sweep.svg"), plot::render_svg(&chart)).map_err(|e| RunError::io(out, e))?;
    Ok(points)
}
