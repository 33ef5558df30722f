//! Stored recurrent states drift from what the current encoder would
//! produce as training proceeds. This collects with a fixed agent, then
//! trains and reports the drift on sampled segments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmc::agent::{collect_step, ActionSource, Agent, AgentConfig, Rollout};
use rmc::envs::{Env, EnvKind};
use rmc::replay::{staleness, ReplayBuffer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind = EnvKind::Pendulum;
    let config = AgentConfig {
        hidden_dim: 16,
        head_hidden: vec![32],
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(config, kind.obs_dim(), kind.action_dim(), 0)?;
    let mut env = Env::new(kind, 0, 0.3)?;
    let mut buffer = ReplayBuffer::new(agent.replay_config())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rollout = Rollout::start(&agent, &mut env, 0);
    for _ in 0..1_000 {
        let c = collect_step(&agent, &mut env, &mut rollout, ActionSource::Policy, &mut rng)?;
        buffer.append(c.record)?;
    }
    let mut probe = ChaCha8Rng::seed_from_u64(99);
    let segments = buffer.sample_batch(32, &mut probe)?;
    let drift = |agent: &Agent| {
        let gru = agent.encoder().expect("recurrent encoder");
        segments.iter().map(|s| staleness(s, gru)).sum::<f64>() / segments.len() as f64
    };
    println!("updates {:>4}  mean staleness {:.3e}", agent.updates(), drift(&agent));
    for round in 1..=4 {
        for _ in 0..50 {
            agent.train_step(&buffer, 1_000, &mut rng)?;
        }
        println!("updates {:>4}  mean staleness {:.3e}", round * 50, drift(&agent));
    }
    Ok(())
}
