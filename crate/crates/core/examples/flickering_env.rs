//! Observation dropout on the pendulum: with probability p the agent sees
//! zeros instead of the true observation.

use rmc::envs::{random_policy_returns, Env, EnvKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut env = Env::new(EnvKind::Pendulum, 4, 0.5)?;
    let first = env.reset();
    println!("reset: {:?} obscured={}", first.obs, first.obscured);
    for t in 0..8 {
        let step = env.step(&[0.3])?;
        println!("t={t} obs={:?} obscured={} reward={:.3}", step.observation.obs, step.observation.obscured, step.reward);
    }
    for kind in [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::PointMassSparse] {
        let r = random_policy_returns(kind, 20, 0)?;
        println!("{kind}: random-policy return {:.1}", r.iter().sum::<f64>() / r.len() as f64);
    }
    Ok(())
}
