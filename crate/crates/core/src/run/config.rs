//! Run configuration: agent settings plus environment, seed, output and
//! evaluation cadence, read from a flat `key = value` file with optional
//! `[section]` headers and overridden by command-line flags.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::{AgentConfig, RoutingScheme};
use crate::envs::EnvKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: {message}")]
    Line { file: String, line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const SECTIONS: [&str; 4] = ["run", "agent", "replay", "env"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub agent: AgentConfig,
    pub env: EnvKind,
    pub flicker_p: f64,
    pub seed: u64,
    /// Run directory; chosen from the output root when unset.
    pub out: Option<PathBuf>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Periodic checkpoints every this many env steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Segments sampled per metrics row to measure stored-state staleness.
    pub staleness_samples: usize,
    /// Stop once an eval mean reaches this return.
    pub stop_at_return: Option<f64>,
    /// Seeds per configuration in multi-run drivers.
    pub seeds: usize,
    /// Return of the fully observed reference agent for score normalization.
    pub reference_return: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            env: EnvKind::Pendulum,
            flicker_p: 0.0,
            seed: 0,
            out: None,
            eval_every: 2000,
            eval_episodes: 20,
            checkpoint_every: 0,
            staleness_samples: 16,
            stop_at_return: None,
            seeds: 5,
            reference_return: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, String> {
    if value == "none" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Sets one key. Errors carry a message without location.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let a = &mut self.agent;
        match key {
            "env" => self.env = value.parse().map_err(|e| format!("{e}"))?,
            "flicker_p" => self.flicker_p = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = parse_opt(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "staleness_samples" => self.staleness_samples = parse(key, value)?,
            "stop_at_return" => self.stop_at_return = parse_opt(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "reference_return" => self.reference_return = parse_opt(key, value)?,
            "preset" => match value {
                "slow-lr" => *a = a.clone().with_slow_lr(),
                "wide-heads" => *a = a.clone().with_wide_heads(),
                other => return Err(format!("unknown preset `{other}` (slow-lr, wide-heads)")),
            },
            "steps" | "total_steps" => a.total_steps = parse(key, value)?,
            "gamma" => a.gamma = parse(key, value)?,
            "initial_alpha" => a.initial_alpha = parse(key, value)?,
            "target_entropy" => a.target_entropy = parse_opt(key, value)?,
            "beta0" => a.beta0 = parse(key, value)?,
            "beta_decay_steps" => a.beta_decay_steps = parse_opt(key, value)?,
            "polyak" => a.polyak = parse(key, value)?,
            "lr" => {
                let lr = parse(key, value)?;
                a.lr_encoder = lr;
                a.lr_model = lr;
                a.lr_q = lr;
                a.lr_policy = lr;
                a.lr_alpha = lr;
            }
            "lr_encoder" => a.lr_encoder = parse(key, value)?,
            "lr_model" => a.lr_model = parse(key, value)?,
            "lr_q" => a.lr_q = parse(key, value)?,
            "lr_policy" => a.lr_policy = parse(key, value)?,
            "lr_alpha" => a.lr_alpha = parse(key, value)?,
            "batch_size" => a.batch_size = parse(key, value)?,
            "burn_in_len" => a.burn_in_len = parse(key, value)?,
            "train_len" => a.train_len = parse(key, value)?,
            "replay_capacity" => a.replay_capacity = parse(key, value)?,
            "replay_strategy" => a.replay_strategy = value.parse().map_err(|e| format!("{e}"))?,
            "scheme" => {
                let id: u8 = parse(key, value)?;
                a.scheme = RoutingScheme::from_id(id).map_err(|e| e.to_string())?;
            }
            "grad_steps_per_env_step" => a.grad_steps_per_env_step = parse(key, value)?,
            "random_steps" => a.random_steps = parse(key, value)?,
            "hidden_dim" => a.hidden_dim = parse(key, value)?,
            "head_hidden" => {
                a.head_hidden = value
                    .split(',')
                    .map(|s| parse::<usize>(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "policy_q" => a.policy_q = value.parse().map_err(|e| format!("{e}"))?,
            "model_loss" => a.model_loss = value.parse().map_err(|e| format!("{e}"))?,
            "encoder" => a.encoder = value.parse().map_err(|e| format!("{e}"))?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` and `;` start comments.
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<(), ConfigError> {
        let err = |line: usize, message: String| ConfigError::Line {
            file: file.to_string(),
            line,
            message,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(i + 1, format!("malformed section header `{line}`")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(i + 1, format!("unknown section `{name}`")));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(|m| err(i + 1, m))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.agent.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.flicker_p) {
            return Err(ConfigError::Invalid(format!("flicker_p must lie in [0, 1], got {}", self.flicker_p)));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(ConfigError::Invalid("eval_every and eval_episodes must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(ConfigError::Invalid("seeds must be positive".into()));
        }
        Ok(())
    }

    /// The resolved configuration in the file format; parsing it back
    /// yields an equal config.
    pub fn to_text(&self) -> String {
        let a = &self.agent;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::from("[run]\n");
        let kv = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(&mut s, "env", self.env.to_string());
        kv(&mut s, "flicker_p", self.flicker_p.to_string());
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "out", opt(self.out.as_ref().map(|p| p.display().to_string())));
        kv(&mut s, "eval_every", self.eval_every.to_string());
        kv(&mut s, "eval_episodes", self.eval_episodes.to_string());
        kv(&mut s, "checkpoint_every", self.checkpoint_every.to_string());
        kv(&mut s, "staleness_samples", self.staleness_samples.to_string());
        kv(&mut s, "stop_at_return", opt(self.stop_at_return.map(|v| v.to_string())));
        kv(&mut s, "seeds", self.seeds.to_string());
        kv(&mut s, "reference_return", opt(self.reference_return.map(|v| v.to_string())));
        s.push_str("[agent]\n");
        kv(&mut s, "total_steps", a.total_steps.to_string());
        kv(&mut s, "gamma", a.gamma.to_string());
        kv(&mut s, "initial_alpha", a.initial_alpha.to_string());
        kv(&mut s, "target_entropy", opt(a.target_entropy.map(|v| v.to_string())));
        kv(&mut s, "beta0", a.beta0.to_string());
        kv(&mut s, "beta_decay_steps", opt(a.beta_decay_steps.map(|v| v.to_string())));
        kv(&mut s, "polyak", a.polyak.to_string());
        kv(&mut s, "lr_encoder", a.lr_encoder.to_string());
        kv(&mut s, "lr_model", a.lr_model.to_string());
        kv(&mut s, "lr_q", a.lr_q.to_string());
        kv(&mut s, "lr_policy", a.lr_policy.to_string());
        kv(&mut s, "lr_alpha", a.lr_alpha.to_string());
        kv(&mut s, "batch_size", a.batch_size.to_string());
        kv(&mut s, "burn_in_len", a.burn_in_len.to_string());
        kv(&mut s, "train_len", a.train_len.to_string());
        kv(&mut s, "replay_capacity", a.replay_capacity.to_string());
        kv(&mut s, "replay_strategy", a.replay_strategy.to_string());
        kv(&mut s, "scheme", a.scheme.id().expect("validated scheme").to_string());
        kv(&mut s, "grad_steps_per_env_step", a.grad_steps_per_env_step.to_string());
        kv(&mut s, "random_steps", a.random_steps.to_string());
        kv(&mut s, "hidden_dim", a.hidden_dim.to_string());
        let heads: Vec<String> = a.head_hidden.iter().map(|h| h.to_string()).collect();
        kv(&mut s, "head_hidden", heads.join(","));
        kv(&mut s, "policy_q", a.policy_q.to_string());
        kv(&mut s, "model_loss", a.model_loss.to_string());
        kv(&mut s, "encoder", a.encoder.to_string());
        s
    }
}
