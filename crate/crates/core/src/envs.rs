//! Small continuous-control environments and the flickering-observation
//! wrapper.
//!
//! Both tasks use a continuous action box `[-1, 1]^n` and dense rewards.
//! Physics steps are pure functions of `(state, action)`; randomness only
//! enters through `reset` and the flicker draw.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}` (expected pendulum, pointmass or pointmass-sparse)")]
    UnknownEnv(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite environment state")]
    NonFinite,
    #[error("flicker probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("degenerate score normalization: reference {reference} must exceed random {random}")]
    DegenerateScore { random: f64, reference: f64 },
    #[error("step called on a finished episode")]
    Finished,
}

pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_G: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
pub const PENDULUM_HORIZON: usize = 200;

pub const POINTMASS_DT: f64 = 0.05;
pub const POINTMASS_GOAL_RADIUS: f64 = 0.05;
pub const POINTMASS_HORIZON: usize = 300;

/// Maps an angle into `[-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut x = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI && theta > 0.0 {
        x = PI;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    /// Angle from upright, radians.
    pub theta: f64,
    /// Angular velocity, rad/s.
    pub theta_dot: f64,
    pub elapsed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub fn pendulum_obs(s: &PendulumState) -> Vec<f64> {
    vec![s.theta.cos(), s.theta.sin(), s.theta_dot / PENDULUM_MAX_SPEED]
}

/// Semi-implicit Euler step of the torque-limited pendulum.
pub fn pendulum_step(state: &PendulumState, action: &[f64]) -> Result<Transition<PendulumState>, EnvError> {
    if action.len() != 1 {
        return Err(EnvError::Dim {
            what: "pendulum action",
            expected: 1,
            got: action.len(),
        });
    }
    if !(state.theta.is_finite() && state.theta_dot.is_finite()) || !action[0].is_finite() {
        return Err(EnvError::NonFinite);
    }
    let (g, m, l, dt) = (PENDULUM_G, PENDULUM_MASS, PENDULUM_LENGTH, PENDULUM_DT);
    let u = PENDULUM_MAX_TORQUE * action[0].clamp(-1.0, 1.0);
    let th = state.theta;
    // -3g/(2l) sin(th + pi) == 3g/(2l) sin(th)
    let acc = 3.0 * g / (2.0 * l) * th.sin() + 3.0 * u / (m * l * l);
    let theta_dot = (state.theta_dot + acc * dt).clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let theta = th + theta_dot * dt;
    let cost = wrap_angle(th).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u;
    let next = PendulumState {
        theta,
        theta_dot,
        elapsed: state.elapsed + 1,
    };
    Ok(Transition {
        obs: pendulum_obs(&next),
        state: next,
        reward: -cost,
        done: next.elapsed >= PENDULUM_HORIZON,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointMassReward {
    /// `-|goal - pos| - 0.01 |a|^2` every step.
    Dense,
    /// `1` on the step that reaches the goal, `0` otherwise.
    GoalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    pub elapsed: usize,
}

pub fn pointmass_obs(s: &PointMassState) -> Vec<f64> {
    vec![
        s.pos[0],
        s.pos[1],
        s.vel[0],
        s.vel[1],
        s.goal[0] - s.pos[0],
        s.goal[1] - s.pos[1],
    ]
}

fn goal_distance(s: &PointMassState) -> f64 {
    (s.goal[0] - s.pos[0]).hypot(s.goal[1] - s.pos[1])
}

pub fn pointmass_step(
    state: &PointMassState,
    action: &[f64],
    reward: PointMassReward,
) -> Result<Transition<PointMassState>, EnvError> {
    if action.len() != 2 {
        return Err(EnvError::Dim {
            what: "pointmass action",
            expected: 2,
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(EnvError::NonFinite);
    }
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let mut next = *state;
    for i in 0..2 {
        next.vel[i] = (0.9 * state.vel[i] + 0.1 * a[i]).clamp(-1.0, 1.0);
        next.pos[i] = (state.pos[i] + POINTMASS_DT * next.vel[i]).clamp(-1.0, 1.0);
    }
    next.elapsed = state.elapsed + 1;
    let dist = goal_distance(&next);
    let reached = dist < POINTMASS_GOAL_RADIUS;
    let r = match reward {
        PointMassReward::Dense => -dist - 0.01 * (a[0] * a[0] + a[1] * a[1]),
        PointMassReward::GoalOnly => {
            if reached {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok(Transition {
        obs: pointmass_obs(&next),
        state: next,
        reward: r,
        done: reached || next.elapsed >= POINTMASS_HORIZON,
    })
}

/// Environment selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    Pendulum,
    PointMass,
    PointMassSparse,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "pointmass",
            EnvKind::PointMassSparse => "pointmass-sparse",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 3,
            EnvKind::PointMass | EnvKind::PointMassSparse => 6,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 1,
            EnvKind::PointMass | EnvKind::PointMassSparse => 2,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            EnvKind::Pendulum => PENDULUM_HORIZON,
            EnvKind::PointMass | EnvKind::PointMassSparse => POINTMASS_HORIZON,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "pointmass" => Ok(EnvKind::PointMass),
            "pointmass-sparse" => Ok(EnvKind::PointMassSparse),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvState {
    Pendulum(PendulumState),
    PointMass(PointMassState),
}

/// What the agent sees. `obscured` is for diagnostics only.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs: Vec<f64>,
    pub obscured: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerConfig {
    pub p: f64,
    pub seed: u64,
}

/// Independently zeroes each observation with probability `p`.
#[derive(Debug, Clone)]
pub struct Flicker {
    p: f64,
    rng: ChaCha8Rng,
}

impl Flicker {
    pub fn new(cfg: FlickerConfig) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&cfg.p) {
            return Err(EnvError::Probability(cfg.p));
        }
        Ok(Self {
            p: cfg.p,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn wrap(&mut self, obs: Vec<f64>) -> Observation {
        let draw: f64 = self.rng.random();
        if draw < self.p {
            Observation {
                obs: vec![0.0; obs.len()],
                obscured: true,
            }
        } else {
            Observation { obs, obscured: false }
        }
    }
}

/// Output of [`Env::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// A running episode: physics state, reset randomness and the flicker
/// wrapper, all seeded independently.
#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    state: EnvState,
    reset_rng: ChaCha8Rng,
    flicker: Flicker,
    finished: bool,
}

impl Env {
    pub fn new(kind: EnvKind, seed: u64, flicker_p: f64) -> Result<Self, EnvError> {
        let flicker = Flicker::new(FlickerConfig {
            p: flicker_p,
            seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        })?;
        let mut reset_rng = ChaCha8Rng::seed_from_u64(seed);
        let state = Self::initial_state(kind, &mut reset_rng);
        Ok(Self {
            kind,
            state,
            reset_rng,
            flicker,
            finished: true,
        })
    }

    fn initial_state(kind: EnvKind, rng: &mut ChaCha8Rng) -> EnvState {
        match kind {
            EnvKind::Pendulum => EnvState::Pendulum(PendulumState {
                theta: rng.random_range(-PI..PI),
                theta_dot: rng.random_range(-1.0..1.0),
                elapsed: 0,
            }),
            EnvKind::PointMass | EnvKind::PointMassSparse => EnvState::PointMass(PointMassState {
                pos: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                vel: [0.0, 0.0],
                goal: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                elapsed: 0,
            }),
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    fn raw_obs(&self) -> Vec<f64> {
        match &self.state {
            EnvState::Pendulum(s) => pendulum_obs(s),
            EnvState::PointMass(s) => pointmass_obs(s),
        }
    }

    pub fn reset(&mut self) -> Observation {
        self.state = Self::initial_state(self.kind, &mut self.reset_rng);
        self.finished = false;
        let obs = self.raw_obs();
        self.flicker.wrap(obs)
    }

    /// Starts an episode from a given physical state.
    pub fn reset_to(&mut self, state: EnvState) -> Observation {
        self.state = state;
        self.finished = false;
        let obs = self.raw_obs();
        self.flicker.wrap(obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep, EnvError> {
        if self.finished {
            return Err(EnvError::Finished);
        }
        let (state, obs, reward, done) = match (&self.state, self.kind) {
            (EnvState::Pendulum(s), _) => {
                let t = pendulum_step(s, action)?;
                (EnvState::Pendulum(t.state), t.obs, t.reward, t.done)
            }
            (EnvState::PointMass(s), kind) => {
                let mode = if kind == EnvKind::PointMassSparse {
                    PointMassReward::GoalOnly
                } else {
                    PointMassReward::Dense
                };
                let t = pointmass_step(s, action, mode)?;
                (EnvState::PointMass(t.state), t.obs, t.reward, t.done)
            }
        };
        self.state = state;
        self.finished = done;
        Ok(EnvStep {
            observation: self.flicker.wrap(obs),
            reward,
            done,
        })
    }
}

/// `(mean - random) / (reference - random)`: 0 for a random policy, 1 for
/// the reference agent.
pub fn normalized_score(mean_return: f64, random_return: f64, reference_return: f64) -> Result<f64, EnvError> {
    let span = reference_return - random_return;
    if !(span > 0.0) || !span.is_finite() {
        return Err(EnvError::DegenerateScore {
            random: random_return,
            reference: reference_return,
        });
    }
    Ok((mean_return - random_return) / span)
}

/// Mean and per-episode returns of a uniform-random policy.
pub fn random_policy_returns(kind: EnvKind, episodes: usize, seed: u64) -> Result<Vec<f64>, EnvError> {
    let mut env = Env::new(kind, seed, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset();
        let mut total = 0.0;
        loop {
            let a: Vec<f64> = (0..kind.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = env.step(&a)?;
            total += s.reward;
            if s.done {
                break;
            }
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_is_fixed_point() {
        let s = PendulumState {
            theta: 0.0,
            theta_dot: 0.0,
            elapsed: 0,
        };
        let t = pendulum_step(&s, &[0.0]).unwrap();
        assert_eq!(t.state.theta, 0.0);
        assert_eq!(t.state.theta_dot, 0.0);
        assert_eq!(t.reward, 0.0);
        assert!(!t.done);
    }

    #[test]
    fn hanging_equilibrium() {
        let s = PendulumState {
            theta: PI,
            theta_dot: 0.0,
            elapsed: 0,
        };
        let t = pendulum_step(&s, &[0.0]).unwrap();
        // sin(pi) is ~1.2e-16 in floating point
        assert!(t.state.theta_dot.abs() < 1e-14);
        assert!((t.reward + PI * PI).abs() < 1e-12);
        assert!((t.reward + 9.8696).abs() < 1e-4);
    }

    #[test]
    fn pendulum_integration_by_hand() {
        let s = PendulumState {
            theta: 0.5,
            theta_dot: -1.0,
            elapsed: 0,
        };
        let t = pendulum_step(&s, &[0.25]).unwrap();
        let u = 0.5;
        let thd = -1.0 + (15.0 * 0.5f64.sin() + 3.0 * u) * 0.05;
        assert!((t.state.theta_dot - thd).abs() < 1e-15);
        assert!((t.state.theta - (0.5 + thd * 0.05)).abs() < 1e-15);
        let r = -(0.25 + 0.1 * thd * thd + 0.001 * u * u);
        assert!((t.reward - r).abs() < 1e-15);
    }

    #[test]
    fn pendulum_horizon_and_bounds() {
        let mut env = Env::new(EnvKind::Pendulum, 3, 0.0).unwrap();
        env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lower = -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0);
        for i in 0..PENDULUM_HORIZON {
            let s = env.step(&[rng.random_range(-3.0..3.0)]).unwrap();
            assert!(s.reward <= 0.0 && s.reward >= lower);
            let o = &s.observation.obs;
            assert!((o[0] * o[0] + o[1] * o[1] - 1.0).abs() < 1e-12);
            assert_eq!(s.done, i + 1 == PENDULUM_HORIZON);
        }
        assert_eq!(env.step(&[0.0]), Err(EnvError::Finished));
    }

    #[test]
    fn pointmass_at_goal() {
        let s = PointMassState {
            pos: [0.2, 0.3],
            vel: [0.0, 0.0],
            goal: [0.2, 0.3],
            elapsed: 0,
        };
        let t = pointmass_step(&s, &[0.0, 0.0], PointMassReward::Dense).unwrap();
        assert!(t.done);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn pointmass_one_step_by_hand() {
        let s = PointMassState {
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            goal: [0.6, 0.0],
            elapsed: 0,
        };
        let t = pointmass_step(&s, &[1.0, 0.0], PointMassReward::Dense).unwrap();
        assert!((t.state.vel[0] - 0.1).abs() < 1e-15);
        assert!((t.state.pos[0] - 0.005).abs() < 1e-15);
        assert!((t.reward - (-0.595 - 0.01)).abs() < 1e-12);
        assert!(!t.done);
    }

    #[test]
    fn pointmass_no_force_stays_put() {
        let mut s = PointMassState {
            pos: [0.4, -0.7],
            vel: [0.0, 0.0],
            goal: [-0.5, 0.5],
            elapsed: 0,
        };
        for _ in 0..50 {
            s = pointmass_step(&s, &[0.0, 0.0], PointMassReward::Dense).unwrap().state;
            assert_eq!(s.pos, [0.4, -0.7]);
        }
    }

    #[test]
    fn pointmass_dim_error() {
        let s = PointMassState {
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.5; 2],
            elapsed: 0,
        };
        assert!(matches!(
            pointmass_step(&s, &[1.0], PointMassReward::Dense),
            Err(EnvError::Dim { .. })
        ));
    }

    #[test]
    fn flicker_extremes_and_rate() {
        let obs = vec![0.1, -0.2, 0.3];
        let mut never = Flicker::new(FlickerConfig { p: 0.0, seed: 1 }).unwrap();
        let mut always = Flicker::new(FlickerConfig { p: 1.0, seed: 1 }).unwrap();
        let mut half = Flicker::new(FlickerConfig { p: 0.5, seed: 1 }).unwrap();
        let mut obscured = 0;
        for _ in 0..10_000 {
            let o = never.wrap(obs.clone());
            assert!(!o.obscured);
            assert!(o.obs.iter().zip(&obs).all(|(a, b)| a.to_bits() == b.to_bits()));
            let z = always.wrap(obs.clone());
            assert!(z.obscured && z.obs.iter().all(|&x| x == 0.0));
            let h = half.wrap(obs.clone());
            if h.obscured {
                assert!(h.obs.iter().all(|&x| x == 0.0));
                obscured += 1;
            } else {
                assert_eq!(h.obs, obs);
            }
        }
        let frac = obscured as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn flicker_rejects_bad_probability() {
        assert_eq!(
            Flicker::new(FlickerConfig { p: 1.5, seed: 0 }).unwrap_err(),
            EnvError::Probability(1.5)
        );
        assert!(Env::new(EnvKind::Pendulum, 0, -0.1).is_err());
    }

    #[test]
    fn normalized_score_affine() {
        assert_eq!(normalized_score(-1200.0, -1200.0, -200.0).unwrap(), 0.0);
        assert_eq!(normalized_score(-200.0, -1200.0, -200.0).unwrap(), 1.0);
        assert_eq!(normalized_score(-700.0, -1200.0, -200.0).unwrap(), 0.5);
        assert!(normalized_score(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut env = Env::new(EnvKind::PointMass, 42, 0.3).unwrap();
            let mut out = vec![env.reset().obs];
            for i in 0..100 {
                let s = env.step(&[(i as f64 * 0.1).sin(), 0.5]).unwrap();
                out.push(s.observation.obs);
                if s.done {
                    out.push(env.reset().obs);
                }
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn env_names_round_trip() {
        for k in [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::PointMassSparse] {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("cartpole".parse::<EnvKind>().is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-0.25) + 0.25).abs() < 1e-15);
    }
}
