//! Short training run on the flickering pendulum with a reduced network.
//!
//! cargo run --release --example train_pendulum -- [steps]

use rmc::agent::AgentConfig;
use rmc::envs::EnvKind;
use rmc::run::{self, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map_or(Ok(6_000), |s| s.parse())?;
    let cfg = RunConfig {
        env: EnvKind::Pendulum,
        flicker_p: 0.2,
        seed: 1,
        eval_every: 1_000,
        eval_episodes: 5,
        agent: AgentConfig {
            total_steps: steps,
            hidden_dim: 32,
            head_hidden: vec![64, 64],
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let dir = run::output_root().join("example-train-pendulum");
    let summary = run::train(&cfg, &dir, |row| {
        println!(
            "{:>6} return {:>8.1}  q1 {:>8.3}  model {:.4}  alpha {:.3}",
            row.env_step, row.episode_return, row.q1_loss, row.model_loss, row.alpha
        );
    })?;
    println!("best eval return {:.1}; outputs in {}", summary.best_return(), dir.display());
    Ok(())
}
