//! The recurrent model-based actor-critic: state inference over replayed
//! sequences, the model, value, policy and temperature updates, curiosity
//! shaping, gradient routing into the encoder, and experience collection.

pub mod checkpoint;
mod config;
mod losses;

pub use config::{AgentConfig, EncoderKind, ModelLoss, PolicyQ, RoutingScheme};
pub use losses::{
    beta_schedule, compute_model_loss, compute_policy_loss, compute_q_loss, compute_temperature_loss,
    compute_total_reward, intrinsic_reward, masked_mean, q_target,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::diff::{Adam, DiffError, Tape, Tensor, Var};
use crate::envs::{Env, EnvError};
use crate::nets::{polyak_update, Bound, GruParams, ModelParams, NetError, ParamGroup, PolicyParams, QParams, QVars};
use crate::replay::{ReplayBuffer, ReplayConfig, ReplayError, SequenceSegment, StepRecord};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("routing scheme must be 1..=6, got {0}")]
    InvalidScheme(u8),
    #[error("routing (model={model}, value={value}, policy={policy}) is not a valid scheme")]
    InvalidRouting { model: bool, value: bool, policy: bool },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{what}: {left} rows vs {right} rows")]
    Misaligned {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("non-finite {group} loss (batch seed {batch_seed})")]
    NonFiniteLoss { group: &'static str, batch_seed: u64 },
    #[error("non-finite {group} gradient (batch seed {batch_seed})")]
    NonFiniteGradient { group: String, batch_seed: u64 },
    #[error("{what}: checkpoint has {checkpoint}, environment `{env_name}` has {env}")]
    DimMismatch {
        what: &'static str,
        checkpoint: usize,
        env_name: String,
        env: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Scalars from one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub model_loss: f64,
    pub q_loss: [f64; 2],
    pub policy_loss: f64,
    pub temp_loss: f64,
    pub mean_intrinsic_reward: f64,
    pub mean_entropy_estimate: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.model_loss,
            self.q_loss[0],
            self.q_loss[1],
            self.policy_loss,
            self.temp_loss,
            self.mean_intrinsic_reward,
            self.mean_entropy_estimate,
            self.alpha,
            self.beta,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// A minibatch of segments laid out time-major for batched unrolling.
///
/// Row `t * batch + b` of the flattened tensors refers to train position `t`
/// of segment `b`. Segments shorter than `steps` are padded and masked out.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub steps: usize,
    pub batch: usize,
    /// Encoder state after the burn-in prefix, `[batch, hidden]`.
    pub h_start: Tensor,
    /// Encoder inputs for positions `0..=steps`; position `len` of a segment
    /// carries the final `next_obs` and action.
    pub obs_in: Vec<Tensor>,
    pub prev_in: Vec<Tensor>,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub dones: Tensor,
    pub mask: Tensor,
}

/// Hidden states a head consumes, with barriers placed per routing scheme.
#[derive(Debug, Clone, Copy)]
pub struct RoutedStates {
    pub model: Var,
    pub value: Var,
    pub policy: Var,
}

/// Wraps the states of every head whose flag is off in a gradient barrier.
pub fn apply_routing(scheme: RoutingScheme, tape: &mut Tape, states: Var) -> RoutedStates {
    let mut route = |into_rnn: bool| if into_rnn { states } else { tape.stop_gradient(states) };
    RoutedStates {
        model: route(scheme.model_into_rnn),
        value: route(scheme.value_into_rnn),
        policy: route(scheme.policy_into_rnn),
    }
}

/// Encoder gradients of each head loss taken separately, plus the gradient
/// each head assigns to its own parameters.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub model_encoder: Vec<Tensor>,
    pub value_encoder: Vec<Tensor>,
    pub policy_encoder: Vec<Tensor>,
    pub model_own: Vec<Tensor>,
    pub value_own: Vec<Tensor>,
    pub policy_own: Vec<Tensor>,
}

struct Optimizers {
    encoder: Option<Adam>,
    model: Adam,
    q: [Adam; 2],
    policy: Adam,
    alpha: Adam,
}

impl Optimizers {
    fn new(
        cfg: &AgentConfig,
        encoder: Option<&GruParams>,
        model: &ModelParams,
        q: &QParams,
        policy: &PolicyParams,
        log_alpha: &Tensor,
    ) -> Self {
        Self {
            encoder: encoder.map(|e| Adam::new("encoder", e.params(), cfg.adam)),
            model: Adam::new("model", model.params(), cfg.adam),
            q: [
                Adam::new("q1", q.online[0].params(), cfg.adam),
                Adam::new("q2", q.online[1].params(), cfg.adam),
            ],
            policy: Adam::new("policy", policy.params(), cfg.adam),
            alpha: Adam::new("alpha", [log_alpha], cfg.adam),
        }
    }
}

pub struct Agent {
    config: AgentConfig,
    obs_dim: usize,
    action_dim: usize,
    encoder: Option<GruParams>,
    model: ModelParams,
    q: QParams,
    policy: PolicyParams,
    log_alpha: Tensor,
    optim: Optimizers,
    updates: u64,
}

struct CriticGraph {
    model_loss: Var,
    intrinsic: Tensor,
    q_loss: [Var; 2],
    model_vars: Vec<Var>,
    q_vars: [Vec<Var>; 2],
}

struct ActorGraph {
    loss: Var,
    log_prob: Tensor,
    vars: Vec<Var>,
}

fn gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape matches")
}

fn row(v: &[f64]) -> Tensor {
    Tensor::new(vec![1, v.len()], v.to_vec()).expect("row")
}

impl Agent {
    pub fn new(config: AgentConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = match config.encoder {
            EncoderKind::Gru => Some(GruParams::new(obs_dim, action_dim, config.hidden_dim, &mut rng)),
            EncoderKind::Memoryless => None,
        };
        let state_dim = encoder.as_ref().map_or(obs_dim, |e| e.hidden_dim);
        let model = ModelParams::new(state_dim, action_dim, &config.head_hidden, &mut rng);
        let q = QParams::new(state_dim, action_dim, &config.head_hidden, &mut rng);
        let policy = PolicyParams::new(state_dim, action_dim, &config.head_hidden, &mut rng);
        let log_alpha = Tensor::scalar(config.initial_alpha.ln());
        let optim = Optimizers::new(&config, encoder.as_ref(), &model, &q, &policy, &log_alpha);
        Ok(Self {
            config,
            obs_dim,
            action_dim,
            encoder,
            model,
            q,
            policy,
            log_alpha,
            optim,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Width of the state fed to the heads.
    pub fn state_dim(&self) -> usize {
        self.encoder.as_ref().map_or(self.obs_dim, |e| e.hidden_dim)
    }

    /// Width of the recurrent state stored in replay records.
    pub fn hidden_len(&self) -> usize {
        self.encoder.as_ref().map_or(0, |e| e.hidden_dim)
    }

    pub fn encoder(&self) -> Option<&GruParams> {
        self.encoder.as_ref()
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn q(&self) -> &QParams {
        &self.q
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut PolicyParams {
        &mut self.policy
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.item().exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha.item()
    }

    /// Number of completed training steps.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn replay_config(&self) -> ReplayConfig {
        let c = &self.config;
        ReplayConfig {
            capacity: c.replay_capacity,
            burn_in_len: c.burn_in_len,
            train_len: c.train_len,
            strategy: c.replay_strategy,
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            hidden_dim: self.hidden_len(),
        }
    }

    /// One encoder step for a single observation.
    pub fn encode(&self, obs: &[f64], prev_action: &[f64], h: &[f64]) -> Result<Vec<f64>, AgentError> {
        let Some(gru) = &self.encoder else {
            return Ok(obs.to_vec());
        };
        let mut tape = Tape::new();
        let vars = gru.bind(&mut tape, false);
        let o = tape.constant(row(obs));
        let a = tape.constant(row(prev_action));
        let hv = tape.constant(row(h));
        let out = gru.step(&mut tape, &vars, o, a, hv)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Policy action for one state: a reparameterized draw with noise `xi`,
    /// or the mode `tanh(mean)` when `xi` is `None`.
    pub fn policy_action(&self, state: &[f64], xi: Option<&[f64]>) -> Result<Vec<f64>, AgentError> {
        let mut tape = Tape::new();
        let vars = self.policy.bind(&mut tape, false);
        let s = tape.constant(row(state));
        let a = match xi {
            Some(xi) => self.policy.sample(&mut tape, &vars, s, &row(xi))?.action,
            None => vars.mode(&mut tape, s)?,
        };
        Ok(tape.value(a).data().to_vec())
    }

    /// Lays out `segments` for batched unrolling and runs the burn-in prefix
    /// without recording gradients.
    pub fn prepare_batch(&self, segments: &[SequenceSegment]) -> Result<TrainBatch, AgentError> {
        let b = segments.len();
        if b == 0 {
            return Err(AgentError::InvalidConfig("empty batch".into()));
        }
        let (o_dim, a_dim, h_dim) = (self.obs_dim, self.action_dim, self.hidden_len());
        for s in segments {
            if s.train_len == 0 || s.records.len() != s.burn_in_len + s.train_len {
                return Err(AgentError::Misaligned {
                    what: "segment records",
                    left: s.records.len(),
                    right: s.burn_in_len + s.train_len,
                });
            }
            if s.h0.len() != h_dim {
                return Err(NetError::Dim {
                    what: "segment initial state",
                    expected: h_dim,
                    got: s.h0.len(),
                }
                .into());
            }
        }
        let h_start = self.burn_in(segments)?;
        let steps = segments.iter().map(|s| s.train_len).max().expect("non-empty");
        let mut obs_in = Vec::with_capacity(steps + 1);
        let mut prev_in = Vec::with_capacity(steps + 1);
        for t in 0..=steps {
            let mut o = vec![0.0; b * o_dim];
            let mut p = vec![0.0; b * a_dim];
            for (i, s) in segments.iter().enumerate() {
                let train = s.train();
                let (src_o, src_p) = if t < train.len() {
                    (&train[t].obs, &train[t].prev_action)
                } else if t == train.len() {
                    (&train[t - 1].next_obs, &train[t - 1].action)
                } else {
                    continue;
                };
                o[i * o_dim..(i + 1) * o_dim].copy_from_slice(src_o);
                p[i * a_dim..(i + 1) * a_dim].copy_from_slice(src_p);
            }
            obs_in.push(Tensor::new(vec![b, o_dim], o)?);
            prev_in.push(Tensor::new(vec![b, a_dim], p)?);
        }
        let n = steps * b;
        let mut actions = vec![0.0; n * a_dim];
        let mut rewards = vec![0.0; n];
        let mut dones = vec![0.0; n];
        let mut mask = vec![0.0; n];
        for (i, s) in segments.iter().enumerate() {
            for (t, r) in s.train().iter().enumerate() {
                let k = t * b + i;
                actions[k * a_dim..(k + 1) * a_dim].copy_from_slice(&r.action);
                rewards[k] = r.reward;
                dones[k] = if r.done { 1.0 } else { 0.0 };
                mask[k] = 1.0;
            }
        }
        Ok(TrainBatch {
            steps,
            batch: b,
            h_start,
            obs_in,
            prev_in,
            actions: Tensor::new(vec![n, a_dim], actions)?,
            rewards: Tensor::vector(rewards),
            dones: Tensor::vector(dones),
            mask: Tensor::vector(mask),
        })
    }

    /// Gradient-free unroll of each segment's burn-in prefix from its `h0`.
    /// Prefixes of different lengths are right-aligned.
    fn burn_in(&self, segments: &[SequenceSegment]) -> Result<Tensor, AgentError> {
        let b = segments.len();
        let h_dim = self.hidden_len();
        let h0: Vec<f64> = segments.iter().flat_map(|s| s.h0.iter().copied()).collect();
        let mut h = Tensor::new(vec![b, h_dim], h0)?;
        let Some(gru) = &self.encoder else {
            return Ok(h);
        };
        let longest = segments.iter().map(|s| s.burn_in_len).max().unwrap_or(0);
        if longest == 0 {
            return Ok(h);
        }
        let (o_dim, a_dim) = (self.obs_dim, self.action_dim);
        let mut tape = Tape::new();
        let vars = gru.bind(&mut tape, false);
        for j in 0..longest {
            let mut o = vec![0.0; b * o_dim];
            let mut p = vec![0.0; b * a_dim];
            let mut active = vec![false; b];
            for (i, s) in segments.iter().enumerate() {
                let offset = longest - s.burn_in_len;
                if j >= offset {
                    let r = &s.records[j - offset];
                    o[i * o_dim..(i + 1) * o_dim].copy_from_slice(&r.obs);
                    p[i * a_dim..(i + 1) * a_dim].copy_from_slice(&r.prev_action);
                    active[i] = true;
                }
            }
            let ov = tape.constant(Tensor::new(vec![b, o_dim], o)?);
            let pv = tape.constant(Tensor::new(vec![b, a_dim], p)?);
            let hv = tape.constant(h.clone());
            let next = gru.step(&mut tape, &vars, ov, pv, hv)?;
            let next = tape.value(next);
            for (i, &on) in active.iter().enumerate() {
                if on {
                    h.data_mut()[i * h_dim..(i + 1) * h_dim].copy_from_slice(next.row(i));
                }
            }
        }
        Ok(h)
    }

    /// Unrolls the encoder over the train window on `tape`. Returns the
    /// encoder variables (empty for the memoryless encoder), the states at
    /// positions `0..steps` and the states at positions `1..=steps`, each
    /// shaped `[steps * batch, state]`.
    pub fn infer_states(
        &self,
        tape: &mut Tape,
        batch: &TrainBatch,
        trainable: bool,
    ) -> Result<(Vec<Var>, Var, Var), AgentError> {
        let mut states = Vec::with_capacity(batch.steps + 1);
        let mut enc_vars = Vec::new();
        match &self.encoder {
            Some(gru) => {
                let vars = gru.bind(tape, trainable);
                enc_vars = vars.vars();
                let mut h = tape.constant(batch.h_start.clone());
                for t in 0..=batch.steps {
                    let o = tape.constant(batch.obs_in[t].clone());
                    let a = tape.constant(batch.prev_in[t].clone());
                    h = gru.step(tape, &vars, o, a, h)?;
                    states.push(h);
                }
            }
            None => {
                for o in &batch.obs_in {
                    states.push(tape.constant(o.clone()));
                }
            }
        }
        let cur = tape.stack_rows(&states[..batch.steps])?;
        let next = tape.stack_rows(&states[1..])?;
        Ok((enc_vars, cur, next))
    }

    /// Train-window states of one segment as a `[train_len, state]` tensor.
    pub fn segment_states(&self, segment: &SequenceSegment) -> Result<Tensor, AgentError> {
        let batch = self.prepare_batch(std::slice::from_ref(segment))?;
        let mut tape = Tape::new();
        let (_, cur, _) = self.infer_states(&mut tape, &batch, false)?;
        Ok(tape.value(cur).clone())
    }

    fn critic_graph<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        routed: RoutedStates,
        next: Var,
        batch: &TrainBatch,
        beta: f64,
        rng: &mut R,
    ) -> Result<CriticGraph, AgentError> {
        let alpha = self.alpha();
        let next = tape.stop_gradient(next);
        let actions = tape.constant(batch.actions.clone());

        let mv = self.model.bind(tape, true);
        let pred = self.model.predict(tape, &mv, routed.model, actions)?;
        let (model_loss, per_row) = compute_model_loss(tape, pred, next, &batch.mask, self.config.model_loss)?;
        let intrinsic = tape.value(per_row).clone();
        let rewards = batch.rewards.zip_map(&intrinsic, |r, i| r + beta * i);

        let pol = self.policy.bind(tape, false);
        let xi = gaussian(&[batch.actions.rows(), self.action_dim], rng);
        let next_sample = self.policy.sample(tape, &pol, next, &xi)?;
        let tq1 = QVars::bind(&self.q.target[0], tape, false).value(tape, next, next_sample.action)?;
        let tq2 = QVars::bind(&self.q.target[1], tape, false).value(tape, next, next_sample.action)?;
        let min_tq = tape.min(tq1, tq2)?;
        let y = q_target(
            tape,
            &rewards,
            &batch.dones,
            self.config.gamma,
            alpha,
            min_tq,
            next_sample.log_prob,
        )?;

        let mut q_loss = [model_loss; 2];
        let mut q_vars: [Vec<Var>; 2] = Default::default();
        for i in 0..2 {
            let qv = QVars::bind(&self.q.online[i], tape, true);
            q_vars[i] = qv.net.vars();
            let q = qv.value(tape, routed.value, actions)?;
            q_loss[i] = compute_q_loss(tape, q, y, &batch.mask)?;
        }
        Ok(CriticGraph {
            model_loss,
            intrinsic,
            q_loss,
            model_vars: mv.delta.vars(),
            q_vars,
        })
    }

    fn actor_graph<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        state: Var,
        batch: &TrainBatch,
        rng: &mut R,
    ) -> Result<ActorGraph, AgentError> {
        let pv = self.policy.bind(tape, true);
        let xi = gaussian(&[batch.actions.rows(), self.action_dim], rng);
        let sample = self.policy.sample(tape, &pv, state, &xi)?;
        let q1 = QVars::bind(&self.q.online[0], tape, false).value(tape, state, sample.action)?;
        let q = match self.config.policy_q {
            PolicyQ::First => q1,
            PolicyQ::Min => {
                let q2 = QVars::bind(&self.q.online[1], tape, false).value(tape, state, sample.action)?;
                tape.min(q1, q2)?
            }
        };
        let loss = compute_policy_loss(tape, q, sample.log_prob, self.alpha(), &batch.mask)?;
        Ok(ActorGraph {
            loss,
            log_prob: tape.value(sample.log_prob).clone(),
            vars: pv.vars(),
        })
    }

    fn encoder_trainable(&self) -> bool {
        let s = self.config.scheme;
        self.encoder.is_some() && (s.model_into_rnn || s.value_into_rnn || s.policy_into_rnn)
    }

    /// Samples a batch and performs one full update: model and value heads,
    /// policy, encoder (through the routed heads), temperature, then the
    /// target networks.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        env_step: usize,
        rng: &mut R,
    ) -> Result<LossReport, AgentError> {
        let batch_seed: u64 = rng.random();
        let mut brng = ChaCha8Rng::seed_from_u64(batch_seed);
        let segments = buffer.sample_batch(self.config.batch_size, &mut brng)?;
        let batch = self.prepare_batch(&segments)?;
        let beta = beta_schedule(env_step, self.config.beta0, self.config.beta_horizon());
        self.train_on_batch(&batch, beta, batch_seed, &mut brng)
    }

    /// The update of [`Agent::train_step`] on an already prepared batch.
    pub fn train_on_batch<R: Rng + ?Sized>(
        &mut self,
        batch: &TrainBatch,
        beta: f64,
        batch_seed: u64,
        rng: &mut R,
    ) -> Result<LossReport, AgentError> {
        let mut tape = Tape::new();
        let (enc_vars, cur, next) = self.infer_states(&mut tape, batch, self.encoder_trainable())?;
        let routed = apply_routing(self.config.scheme, &mut tape, cur);

        let critic = self.critic_graph(&mut tape, routed, next, batch, beta, rng)?;
        let check = |tape: &Tape, v: Var, group: &'static str| {
            let x = tape.value(v).item();
            if x.is_finite() {
                Ok(x)
            } else {
                Err(AgentError::NonFiniteLoss { group, batch_seed })
            }
        };
        let model_loss = check(&tape, critic.model_loss, "model")?;
        let q_loss = [check(&tape, critic.q_loss[0], "q1")?, check(&tape, critic.q_loss[1], "q2")?];
        let total = tape.add(critic.model_loss, critic.q_loss[0])?;
        let total = tape.add(total, critic.q_loss[1])?;
        let grads = tape.backward(total)?;
        let mut enc_grads = grads.collect(&enc_vars);
        let model_grads = grads.collect(&critic.model_vars);
        let q_grads = [grads.collect(&critic.q_vars[0]), grads.collect(&critic.q_vars[1])];
        drop(grads);

        let grad_err = |e: DiffError| match e {
            DiffError::NonFiniteGradient { group } => AgentError::NonFiniteGradient { group, batch_seed },
            other => other.into(),
        };
        let cfg = &self.config;
        self.optim
            .model
            .step(&mut self.model.params_mut(), &model_grads, cfg.lr_model)
            .map_err(grad_err)?;
        for i in 0..2 {
            self.optim.q[i]
                .step(&mut self.q.online[i].params_mut(), &q_grads[i], cfg.lr_q)
                .map_err(grad_err)?;
        }

        // Policy against the freshly updated value heads.
        let actor = self.actor_graph(&mut tape, routed.policy, batch, rng)?;
        let policy_loss = check(&tape, actor.loss, "policy")?;
        let grads = tape.backward(actor.loss)?;
        let policy_grads = grads.collect(&actor.vars);
        if self.config.scheme.policy_into_rnn {
            for (acc, v) in enc_grads.iter_mut().zip(&enc_vars) {
                acc.add_assign(&grads.get(*v));
            }
        }
        drop(grads);
        let cfg = &self.config;
        self.optim
            .policy
            .step(&mut self.policy.params_mut(), &policy_grads, cfg.lr_policy)
            .map_err(grad_err)?;
        if let (Some(gru), Some(opt)) = (self.encoder.as_mut(), self.optim.encoder.as_mut()) {
            if !enc_vars.is_empty() {
                opt.step(&mut gru.params_mut(), &enc_grads, cfg.lr_encoder).map_err(grad_err)?;
            }
        }

        let target_entropy = cfg.target_entropy_for(self.action_dim);
        let mut ttape = Tape::new();
        let la = ttape.param(self.log_alpha.clone());
        let temp = compute_temperature_loss(&mut ttape, la, &actor.log_prob, target_entropy, &batch.mask)?;
        let temp_loss = check(&ttape, temp, "temperature")?;
        let g = ttape.backward(temp)?.get(la);
        self.optim
            .alpha
            .step(&mut [&mut self.log_alpha], &[g], cfg.lr_alpha)
            .map_err(grad_err)?;

        for i in 0..2 {
            polyak_update(&mut self.q.target[i], &self.q.online[i], cfg.polyak);
        }
        self.updates += 1;

        let count = batch.mask.sum().max(1.0);
        let masked = |t: &Tensor| t.zip_map(&batch.mask, |x, m| x * m).sum() / count;
        Ok(LossReport {
            model_loss,
            q_loss,
            policy_loss,
            temp_loss,
            mean_intrinsic_reward: masked(&critic.intrinsic),
            mean_entropy_estimate: -masked(&actor.log_prob),
            alpha: self.alpha(),
            beta,
        })
    }

    /// Gradients of each head loss, backpropagated one at a time on the
    /// current parameters, without updating anything.
    pub fn head_gradients<R: Rng + ?Sized>(
        &self,
        batch: &TrainBatch,
        beta: f64,
        rng: &mut R,
    ) -> Result<HeadGradients, AgentError> {
        let mut tape = Tape::new();
        let (enc_vars, cur, next) = self.infer_states(&mut tape, batch, self.encoder.is_some())?;
        let routed = apply_routing(self.config.scheme, &mut tape, cur);
        let critic = self.critic_graph(&mut tape, routed, next, batch, beta, rng)?;
        let actor = self.actor_graph(&mut tape, routed.policy, batch, rng)?;
        let value = tape.add(critic.q_loss[0], critic.q_loss[1])?;
        let gm = tape.backward(critic.model_loss)?;
        let gv = tape.backward(value)?;
        let gp = tape.backward(actor.loss)?;
        let mut q_vars = critic.q_vars[0].clone();
        q_vars.extend(&critic.q_vars[1]);
        Ok(HeadGradients {
            model_encoder: gm.collect(&enc_vars),
            value_encoder: gv.collect(&enc_vars),
            policy_encoder: gp.collect(&enc_vars),
            model_own: gm.collect(&critic.model_vars),
            value_own: gv.collect(&q_vars),
            policy_own: gp.collect(&actor.vars),
        })
    }

    pub(crate) fn parts(&self) -> (Option<&GruParams>, &ModelParams, &QParams, &PolicyParams, &Tensor) {
        (self.encoder.as_ref(), &self.model, &self.q, &self.policy, &self.log_alpha)
    }

    pub(crate) fn from_parts(
        config: AgentConfig,
        obs_dim: usize,
        action_dim: usize,
        encoder: Option<GruParams>,
        model: ModelParams,
        q: QParams,
        policy: PolicyParams,
        log_alpha: Tensor,
        updates: u64,
    ) -> Self {
        let optim = Optimizers::new(&config, encoder.as_ref(), &model, &q, &policy, &log_alpha);
        Self {
            config,
            obs_dim,
            action_dim,
            encoder,
            model,
            q,
            policy,
            log_alpha,
            optim,
            updates,
        }
    }
}

/// Where collection actions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    /// Reparameterized policy sample.
    Policy,
    /// `tanh(mean)`.
    Deterministic,
    /// Uniform over the action box, ignoring the policy.
    Uniform,
}

/// Per-episode agent state carried between environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub obs: Vec<f64>,
    /// Recurrent state entering the next step.
    pub h: Vec<f64>,
    pub prev_action: Vec<f64>,
    pub episode_id: u64,
    pub step_index: usize,
    pub episode_return: f64,
}

impl Rollout {
    /// Resets `env` and starts episode `episode_id` from a zero state.
    pub fn start(agent: &Agent, env: &mut Env, episode_id: u64) -> Self {
        let first = env.reset();
        Self {
            obs: first.obs,
            h: vec![0.0; agent.hidden_len()],
            prev_action: vec![0.0; agent.action_dim()],
            episode_id,
            step_index: 0,
            episode_return: 0.0,
        }
    }
}

/// Result of one collection step.
#[derive(Debug, Clone)]
pub struct Collected {
    pub record: StepRecord,
    /// Set when the step ended an episode.
    pub finished_return: Option<f64>,
}

/// Advances `env` by one agent step. The record stores the recurrent state
/// entering the step; on episode end the env is reset and the rollout
/// restarts from zero state and zero previous action.
pub fn collect_step<R: Rng + ?Sized>(
    agent: &Agent,
    env: &mut Env,
    rollout: &mut Rollout,
    source: ActionSource,
    rng: &mut R,
) -> Result<Collected, AgentError> {
    let state = agent.encode(&rollout.obs, &rollout.prev_action, &rollout.h)?;
    let action = match source {
        ActionSource::Uniform => (0..agent.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ActionSource::Deterministic => agent.policy_action(&state, None)?,
        ActionSource::Policy => {
            let xi: Vec<f64> = (0..agent.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
            agent.policy_action(&state, Some(&xi))?
        }
    };
    let step = env.step(&action)?;
    let record = StepRecord {
        obs: std::mem::take(&mut rollout.obs),
        prev_action: std::mem::replace(&mut rollout.prev_action, action.clone()),
        action,
        next_obs: step.observation.obs.clone(),
        reward: step.reward,
        done: step.done,
        hidden: std::mem::replace(&mut rollout.h, if agent.encoder().is_some() { state } else { Vec::new() }),
        episode_id: rollout.episode_id,
        step_index: rollout.step_index,
    };
    rollout.episode_return += step.reward;
    let mut finished_return = None;
    if step.done {
        finished_return = Some(rollout.episode_return);
        *rollout = Rollout::start(agent, env, rollout.episode_id + 1);
    } else {
        rollout.obs = step.observation.obs;
        rollout.step_index += 1;
    }
    Ok(Collected { record, finished_return })
}

/// One evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalEpisode {
    pub ret: f64,
    pub steps: usize,
}

/// Deterministic-policy episodes on `env`, which is reset first.
pub fn evaluate(agent: &Agent, env: &mut Env, episodes: usize) -> Result<Vec<EvalEpisode>, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(episodes);
    if episodes == 0 {
        return Ok(out);
    }
    let mut rollout = Rollout::start(agent, env, 0);
    while out.len() < episodes {
        let steps = rollout.step_index + 1;
        let c = collect_step(agent, env, &mut rollout, ActionSource::Deterministic, &mut rng)?;
        if let Some(ret) = c.finished_return {
            out.push(EvalEpisode { ret, steps });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
