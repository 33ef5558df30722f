use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::diff::AdamConfig;
use crate::replay::ReplayStrategy;

/// Which head losses may backpropagate into the recurrent encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoutingScheme {
    pub model_into_rnn: bool,
    pub value_into_rnn: bool,
    pub policy_into_rnn: bool,
}

/// The six valid schemes, indexed 1..=6: (model, value, policy).
const SCHEMES: [(bool, bool, bool); 6] = [
    (true, true, false),
    (false, true, false),
    (true, false, false),
    (true, true, true),
    (true, false, true),
    (false, true, true),
];

impl RoutingScheme {
    pub fn from_id(id: u8) -> Result<Self, AgentError> {
        let (m, v, p) = *SCHEMES
            .get((id as usize).wrapping_sub(1))
            .ok_or(AgentError::InvalidScheme(id))?;
        Ok(Self {
            model_into_rnn: m,
            value_into_rnn: v,
            policy_into_rnn: p,
        })
    }

    /// Accepts only flag combinations that form one of the six schemes.
    pub fn new(model_into_rnn: bool, value_into_rnn: bool, policy_into_rnn: bool) -> Result<Self, AgentError> {
        let s = Self {
            model_into_rnn,
            value_into_rnn,
            policy_into_rnn,
        };
        s.id().map(|_| s).ok_or(AgentError::InvalidRouting {
            model: model_into_rnn,
            value: value_into_rnn,
            policy: policy_into_rnn,
        })
    }

    pub fn id(&self) -> Option<u8> {
        SCHEMES
            .iter()
            .position(|&(m, v, p)| (m, v, p) == (self.model_into_rnn, self.value_into_rnn, self.policy_into_rnn))
            .map(|i| i as u8 + 1)
    }

    pub fn all() -> impl Iterator<Item = (u8, RoutingScheme)> {
        (1..=6).map(|i| (i, Self::from_id(i).expect("valid id")))
    }
}

impl Default for RoutingScheme {
    fn default() -> Self {
        Self::from_id(1).expect("scheme 1")
    }
}

/// Which Q estimate the policy loss maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyQ {
    First,
    Min,
}

/// Per-transition metric of the model residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelLoss {
    /// Euclidean norm (not squared).
    L2Norm,
    /// Sum of absolute components.
    L1,
}

/// State encoder feeding the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    Gru,
    /// The current observation is used directly as the state.
    Memoryless,
}

macro_rules! named_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = AgentError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(AgentError::InvalidConfig(format!(
                        "unknown {} `{}`", stringify!($ty), other
                    ))),
                }
            }
        }
    };
}

named_enum!(PolicyQ, PolicyQ::First => "first", PolicyQ::Min => "min");
named_enum!(ModelLoss, ModelLoss::L2Norm => "l2norm", ModelLoss::L1 => "l1");
named_enum!(EncoderKind, EncoderKind::Gru => "gru", EncoderKind::Memoryless => "memoryless");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim` when unset.
    pub target_entropy: Option<f64>,
    pub beta0: f64,
    /// Env steps over which beta decays to zero; defaults to half of
    /// `total_steps` when unset.
    pub beta_decay_steps: Option<usize>,
    pub polyak: f64,
    pub lr_encoder: f64,
    pub lr_model: f64,
    pub lr_q: f64,
    pub lr_policy: f64,
    pub lr_alpha: f64,
    pub batch_size: usize,
    pub burn_in_len: usize,
    pub train_len: usize,
    pub replay_capacity: usize,
    pub replay_strategy: ReplayStrategy,
    pub scheme: RoutingScheme,
    pub total_steps: usize,
    pub grad_steps_per_env_step: usize,
    /// Uniform-random actions for this many initial env steps; no updates
    /// happen before it elapses.
    pub random_steps: usize,
    pub hidden_dim: usize,
    pub head_hidden: Vec<usize>,
    pub policy_q: PolicyQ,
    pub model_loss: ModelLoss,
    pub encoder: EncoderKind,
    pub adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            initial_alpha: 0.2,
            target_entropy: None,
            beta0: 0.1,
            beta_decay_steps: None,
            polyak: 0.995,
            lr_encoder: 3e-4,
            lr_model: 3e-4,
            lr_q: 3e-4,
            lr_policy: 3e-4,
            lr_alpha: 3e-4,
            batch_size: 16,
            burn_in_len: 10,
            train_len: 15,
            replay_capacity: 1_000_000,
            replay_strategy: ReplayStrategy::BurnIn,
            scheme: RoutingScheme::default(),
            total_steps: 150_000,
            grad_steps_per_env_step: 1,
            random_steps: 1_000,
            hidden_dim: 128,
            head_hidden: vec![256, 256],
            policy_q: PolicyQ::Min,
            model_loss: ModelLoss::L2Norm,
            encoder: EncoderKind::Gru,
            adam: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    /// Learning rate 1e-4 for every group.
    pub fn with_slow_lr(mut self) -> Self {
        for lr in [
            &mut self.lr_encoder,
            &mut self.lr_model,
            &mut self.lr_q,
            &mut self.lr_policy,
            &mut self.lr_alpha,
        ] {
            *lr = 1e-4;
        }
        self
    }

    /// 400/300 head trunks.
    pub fn with_wide_heads(mut self) -> Self {
        self.head_hidden = vec![400, 300];
        self
    }

    pub fn target_entropy_for(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }

    pub fn beta_horizon(&self) -> usize {
        self.beta_decay_steps.unwrap_or(self.total_steps / 2)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.initial_alpha > 0.0) {
            return bad(format!("initial_alpha must be positive, got {}", self.initial_alpha));
        }
        if !(self.beta0 >= 0.0) {
            return bad(format!("beta0 must be non-negative, got {}", self.beta0));
        }
        if !(0.0..1.0).contains(&self.polyak) {
            return bad(format!("polyak must lie in [0, 1), got {}", self.polyak));
        }
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_model", self.lr_model),
            ("lr_q", self.lr_q),
            ("lr_policy", self.lr_policy),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 || self.train_len == 0 {
            return bad("batch_size and train_len must be positive".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.scheme.id().is_none() {
            return bad("routing scheme is not one of the six valid schemes".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemes_match_table() {
        let expected = [
            (1, true, true, false),
            (2, false, true, false),
            (3, true, false, false),
            (4, true, true, true),
            (5, true, false, true),
            (6, false, true, true),
        ];
        for (id, m, v, p) in expected {
            let s = RoutingScheme::from_id(id).unwrap();
            assert_eq!((s.model_into_rnn, s.value_into_rnn, s.policy_into_rnn), (m, v, p));
            assert_eq!(s.id(), Some(id));
        }
        assert_eq!(RoutingScheme::all().count(), 6);
    }

    #[test]
    fn invalid_schemes_rejected() {
        assert!(matches!(RoutingScheme::from_id(0), Err(AgentError::InvalidScheme(0))));
        assert!(matches!(RoutingScheme::from_id(7), Err(AgentError::InvalidScheme(7))));
        assert!(RoutingScheme::new(false, false, false).is_err());
        assert!(RoutingScheme::new(false, false, true).is_err());
        assert_eq!(RoutingScheme::new(true, false, true).unwrap().id(), Some(5));
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let c = AgentConfig {
            gamma: 1.0,
            ..AgentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = AgentConfig {
            lr_q: 0.0,
            ..AgentConfig::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(AgentConfig::default().with_slow_lr().lr_policy, 1e-4);
        assert_eq!(AgentConfig::default().target_entropy_for(2), -2.0);
        assert_eq!(AgentConfig::default().beta_horizon(), 75_000);
    }

    #[test]
    fn enum_names() {
        assert_eq!("min".parse::<PolicyQ>().unwrap(), PolicyQ::Min);
        assert_eq!("l1".parse::<ModelLoss>().unwrap(), ModelLoss::L1);
        assert_eq!("memoryless".parse::<EncoderKind>().unwrap(), EncoderKind::Memoryless);
        assert!("lstm".parse::<EncoderKind>().is_err());
    }
}
