//! Curiosity scale grid on the sparse point-mass task, where reward only
//! arrives at the goal and exploration matters.

use rmc::agent::AgentConfig;
use rmc::envs::EnvKind;
use rmc::run::{self, AblationPreset, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = RunConfig {
        env: EnvKind::PointMassSparse,
        seeds: 2,
        eval_every: 1_000,
        eval_episodes: 5,
        agent: AgentConfig {
            total_steps: 3_000,
            beta0: 0.5,
            hidden_dim: 16,
            head_hidden: vec![32],
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let root = run::output_root().join("example-curiosity");
    let report = run::ablation(AblationPreset::Curiosity, &base, &root, |r| {
        if let Ok(s) = &r.result {
            let goal = s.rows.last().map_or(0.0, |row| row.eval_goal_rate);
            println!("{:<12} seed {}  goal rate {goal:.2}", r.label, r.seed);
        }
    })?;
    println!("{} runs; summary in {}", report.runs.len(), root.join("summary.csv").display());
    Ok(())
}
