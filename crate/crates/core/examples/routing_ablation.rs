//! All six gradient routing schemes on a short flickering-pendulum budget,
//! one seed each, with a comparison chart.

use rmc::agent::AgentConfig;
use rmc::run::{self, AblationPreset, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = RunConfig {
        flicker_p: 0.5,
        seeds: 1,
        eval_every: 1_000,
        eval_episodes: 3,
        agent: AgentConfig {
            total_steps: 2_000,
            hidden_dim: 16,
            head_hidden: vec![32],
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let root = run::output_root().join("example-routing");
    let report = run::ablation(AblationPreset::Schemes, &base, &root, |r| {
        let ret = r.result.as_ref().map(|s| s.final_return()).unwrap_or(f64::NAN);
        println!("{:<8} final return {ret:.1}", r.label);
    })?;
    if let Some(chart) = report.chart {
        println!("chart: {}", chart.display());
    }
    Ok(())
}
