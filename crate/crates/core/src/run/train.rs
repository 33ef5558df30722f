use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RunConfig, RunError};
use crate::agent::{checkpoint, collect_step, evaluate, ActionSource, Agent, EvalEpisode, LossReport, Rollout};
use crate::envs::Env;
use crate::replay::{staleness, ReplayBuffer};
use crate::stats;

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str = "env_step,episode_return,model_loss,q1_loss,q2_loss,policy_loss,temp_loss,alpha,beta,intrinsic_reward_mean,entropy_estimate,staleness_mean,eval_return_std,eval_goal_rate";

/// One `metrics.csv` row. Loss columns average the training steps since the
/// previous row and are NaN before the first update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: usize,
    /// Mean deterministic eval return.
    pub episode_return: f64,
    pub model_loss: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub temp_loss: f64,
    pub alpha: f64,
    pub beta: f64,
    pub intrinsic_reward_mean: f64,
    pub entropy_estimate: f64,
    pub staleness_mean: f64,
    pub eval_return_std: f64,
    /// Fraction of eval episodes that ended before the time limit.
    pub eval_goal_rate: f64,
}

impl MetricsRow {
    fn fields(&self) -> [f64; 13] {
        [
            self.episode_return,
            self.model_loss,
            self.q1_loss,
            self.q2_loss,
            self.policy_loss,
            self.temp_loss,
            self.alpha,
            self.beta,
            self.intrinsic_reward_mean,
            self.entropy_estimate,
            self.staleness_mean,
            self.eval_return_std,
            self.eval_goal_rate,
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.env_step.to_string();
        for v in self.fields() {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let mut it = line.split(',');
        let env_step = it.next()?.parse().ok()?;
        let v: Vec<f64> = it.map(|x| x.parse().ok()).collect::<Option<_>>()?;
        let [episode_return, model_loss, q1_loss, q2_loss, policy_loss, temp_loss, alpha, beta, intrinsic_reward_mean, entropy_estimate, staleness_mean, eval_return_std, eval_goal_rate] =
            v[..]
        else {
            return None;
        };
        Some(Self {
            env_step,
            episode_return,
            model_loss,
            q1_loss,
            q2_loss,
            policy_loss,
            temp_loss,
            alpha,
            beta,
            intrinsic_reward_mean,
            entropy_estimate,
            staleness_mean,
            eval_return_std,
            eval_goal_rate,
        })
    }
}

/// Reads a `metrics.csv`, checking the header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(RunError::Metrics(format!("{}: unexpected header", path.display())));
    }
    let rows: Vec<MetricsRow> = lines
        .enumerate()
        .map(|(i, l)| {
            MetricsRow::parse_csv(l).ok_or_else(|| RunError::Metrics(format!("{}:{}: malformed row", path.display(), i + 2)))
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(RunError::Metrics(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Default)]
struct Accum {
    n: usize,
    sums: [f64; 7],
    last_alpha: f64,
    last_beta: f64,
}

impl Accum {
    fn add(&mut self, r: &LossReport) {
        self.n += 1;
        let v = [
            r.model_loss,
            r.q_loss[0],
            r.q_loss[1],
            r.policy_loss,
            r.temp_loss,
            r.mean_intrinsic_reward,
            r.mean_entropy_estimate,
        ];
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        self.last_alpha = r.alpha;
        self.last_beta = r.beta;
    }

    fn mean(&self, i: usize) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sums[i] / self.n as f64
        }
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub env_steps: usize,
    pub stopped_early: bool,
}

impl TrainSummary {
    pub fn final_return(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.episode_return)
    }

    pub fn best_return(&self) -> f64 {
        self.rows.iter().map(|r| r.episode_return).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Seed of the evaluation environment for a run seed; every eval point of a
/// run replays the same episode starts.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(1_000_003)
}

/// Deterministic evaluation of `agent` on fresh episodes of the run's env.
pub fn evaluate_run(agent: &Agent, cfg: &RunConfig, flicker_p: f64) -> Result<Vec<EvalEpisode>, RunError> {
    let mut env = Env::new(cfg.env, eval_seed(cfg.seed), flicker_p)?;
    Ok(evaluate(agent, &mut env, cfg.eval_episodes)?)
}

fn staleness_mean(agent: &Agent, buffer: &ReplayBuffer, samples: usize, seed: u64) -> f64 {
    let Some(gru) = agent.encoder() else {
        return 0.0;
    };
    if samples == 0 || buffer.num_sampleable() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match buffer.sample_batch(samples, &mut rng) {
        Ok(segs) => stats::mean(&segs.iter().map(|s| staleness(s, gru)).collect::<Vec<_>>()),
        Err(_) => 0.0,
    }
}

/// Runs the collect/update loop described by `cfg` inside `out_dir`,
/// writing `config.txt`, `metrics.csv`, `timing.csv` and checkpoints.
/// `on_row` sees every metrics row as it is written.
pub fn train(cfg: &RunConfig, out_dir: &Path, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainSummary, RunError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| RunError::io(out_dir, e))?;
    let mut echo = cfg.clone();
    echo.out = Some(out_dir.to_path_buf());
    fs::write(out_dir.join("config.txt"), echo.to_text()).map_err(|e| RunError::io(out_dir, e))?;

    let kind = cfg.env;
    let mut env = Env::new(kind, cfg.seed, cfg.flicker_p)?;
    let mut agent = Agent::new(cfg.agent.clone(), kind.obs_dim(), kind.action_dim(), cfg.seed)?;
    let mut buffer = ReplayBuffer::new(agent.replay_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| RunError::io(&metrics_path, e))?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| RunError::io(&metrics_path, e))?;
    let timing_path = out_dir.join("timing.csv");
    let mut timing = fs::File::create(&timing_path).map_err(|e| RunError::io(&timing_path, e))?;
    writeln!(timing, "env_step,wall_seconds").map_err(|e| RunError::io(&timing_path, e))?;

    let start = Instant::now();
    let total = cfg.agent.total_steps;
    let mut rollout = Rollout::start(&agent, &mut env, 0);
    let mut acc = Accum::default();
    let mut rows = Vec::new();
    let mut stopped_early = false;
    let mut step = 0;
    while step < total {
        let source = if step < cfg.agent.random_steps {
            ActionSource::Uniform
        } else {
            ActionSource::Policy
        };
        let c = collect_step(&agent, &mut env, &mut rollout, source, &mut rng)?;
        buffer.append(c.record)?;
        step += 1;
        if step > cfg.agent.random_steps && buffer.num_sampleable() > 0 {
            for _ in 0..cfg.agent.grad_steps_per_env_step {
                let report = agent.train_step(&buffer, step, &mut rng)?;
                acc.add(&report);
            }
        }
        if step % cfg.eval_every == 0 || step == total {
            let eps = evaluate_run(&agent, cfg, cfg.flicker_p)?;
            let returns: Vec<f64> = eps.iter().map(|e| e.ret).collect();
            let horizon = kind.horizon();
            let row = MetricsRow {
                env_step: step,
                episode_return: stats::mean(&returns),
                model_loss: acc.mean(0),
                q1_loss: acc.mean(1),
                q2_loss: acc.mean(2),
                policy_loss: acc.mean(3),
                temp_loss: acc.mean(4),
                alpha: if acc.n == 0 { agent.alpha() } else { acc.last_alpha },
                beta: if acc.n == 0 {
                    crate::agent::beta_schedule(step, cfg.agent.beta0, cfg.agent.beta_horizon())
                } else {
                    acc.last_beta
                },
                intrinsic_reward_mean: acc.mean(5),
                entropy_estimate: acc.mean(6),
                staleness_mean: staleness_mean(&agent, &buffer, cfg.staleness_samples, cfg.seed.wrapping_add(step as u64)),
                eval_return_std: stats::std_dev(&returns),
                eval_goal_rate: eps.iter().filter(|e| e.steps < horizon).count() as f64 / eps.len() as f64,
            };
            writeln!(metrics, "{}", row.to_csv()).map_err(|e| RunError::io(&metrics_path, e))?;
            writeln!(timing, "{step},{:.3}", start.elapsed().as_secs_f64()).map_err(|e| RunError::io(&timing_path, e))?;
            on_row(&row);
            rows.push(row);
            acc = Accum::default();
            if cfg.stop_at_return.is_some_and(|t| row.episode_return >= t) {
                stopped_early = true;
                break;
            }
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < total {
            checkpoint::save(&agent, &out_dir.join("checkpoints").join(format!("step_{step}")), step)?;
        }
    }
    checkpoint::save(&agent, &out_dir.join("checkpoint"), step)?;
    Ok(TrainSummary {
        out_dir: out_dir.to_path_buf(),
        rows,
        env_steps: step,
        stopped_early,
    })
}
