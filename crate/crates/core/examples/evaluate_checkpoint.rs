//! Train briefly, then reload the final checkpoint and evaluate it with and
//! without observation dropout.

use rmc::agent::AgentConfig;
use rmc::run::{self, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        eval_every: 1_500,
        eval_episodes: 3,
        agent: AgentConfig {
            total_steps: 1_500,
            hidden_dim: 16,
            head_hidden: vec![32],
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let dir = run::output_root().join("example-evaluate");
    let logged = run::train(&cfg, &dir, |_| {})?.final_return();
    println!("logged eval return {logged:.1}");

    let ck = dir.join("checkpoint");
    for p in [0.0, 0.5] {
        let s = run::eval_checkpoint(&ck, None, p, 5, run::eval_seed(cfg.seed), None, None)?;
        println!(
            "p={p}: mean {:.1} +- {:.1}, normalized {:?}",
            s.mean_return, s.std_return, s.normalized_score
        );
    }
    Ok(())
}
