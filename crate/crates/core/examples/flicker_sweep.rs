//! Train on the fully observed pendulum, then sweep the flicker
//! probability at evaluation time. Writes `sweep.csv` and `sweep.svg`.

use rmc::agent::AgentConfig;
use rmc::run::{self, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig {
        eval_every: 3_000,
        eval_episodes: 3,
        agent: AgentConfig {
            total_steps: 3_000,
            hidden_dim: 16,
            head_hidden: vec![64, 64],
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let dir = run::output_root().join("example-sweep");
    run::train(&cfg, &dir, |_| {})?;
    let probs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let points = run::sweep_pomdp(&dir.join("checkpoint"), None, &probs, 5, 0, None, &dir.join("sweep"))?;
    for p in points {
        println!("p={:.1}  return {:>8.1}  score {:?}", p.flicker_p, p.mean_return, p.normalized_score);
    }
    Ok(())
}
