use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::EnvKind;
use crate::replay::{unroll_records, ReplayStrategy};

fn small_config() -> AgentConfig {
    AgentConfig {
        hidden_dim: 8,
        head_hidden: vec![16, 16],
        batch_size: 4,
        burn_in_len: 3,
        train_len: 5,
        ..AgentConfig::default()
    }
}

fn filled(agent: &Agent, steps: usize, seed: u64) -> ReplayBuffer {
    let mut env = Env::new(EnvKind::Pendulum, seed, 0.0).unwrap();
    let mut buf = ReplayBuffer::new(agent.replay_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ro = Rollout::start(agent, &mut env, 0);
    for _ in 0..steps {
        let c = collect_step(agent, &mut env, &mut ro, ActionSource::Policy, &mut rng).unwrap();
        buf.append(c.record).unwrap();
    }
    buf
}

fn is_zero(ts: &[Tensor]) -> bool {
    ts.iter().all(|t| t.data().iter().all(|&x| x == 0.0))
}

#[test]
fn train_step_is_deterministic() {
    let run = || {
        let mut agent = Agent::new(small_config(), 3, 1, 7).unwrap();
        let buf = filled(&agent, 60, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (0..3).map(|t| agent.train_step(&buf, t, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.iter().all(LossReport::is_finite));
}

#[test]
fn routing_blocks_exactly_the_unflagged_heads() {
    for (id, scheme) in RoutingScheme::all() {
        let cfg = AgentConfig {
            scheme,
            ..small_config()
        };
        let agent = Agent::new(cfg, 3, 1, 11).unwrap();
        let buf = filled(&agent, 40, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        let segs = buf.sample_batch(4, &mut rng).unwrap();
        let batch = agent.prepare_batch(&segs).unwrap();
        let g = agent.head_gradients(&batch, 0.1, &mut rng).unwrap();
        assert_eq!(is_zero(&g.model_encoder), !scheme.model_into_rnn, "scheme {id} model");
        assert_eq!(is_zero(&g.value_encoder), !scheme.value_into_rnn, "scheme {id} value");
        assert_eq!(is_zero(&g.policy_encoder), !scheme.policy_into_rnn, "scheme {id} policy");
        assert!(!is_zero(&g.model_own) && !is_zero(&g.value_own) && !is_zero(&g.policy_own));
    }
}

#[test]
fn first_state_without_burn_in_steps_from_h0() {
    let cfg = AgentConfig {
        burn_in_len: 0,
        replay_strategy: ReplayStrategy::StoredState,
        ..small_config()
    };
    let agent = Agent::new(cfg, 3, 1, 5).unwrap();
    let buf = filled(&agent, 30, 4);
    let seg = buf.segment_at(0, 7).unwrap();
    assert_eq!(seg.burn_in_len, 0);
    let states = agent.segment_states(&seg).unwrap();
    let r = &seg.records[0];
    let expected = agent.encode(&r.obs, &r.prev_action, &seg.h0).unwrap();
    for (a, b) in states.row(0).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn replay_reproduces_collection_states() {
    let agent = Agent::new(small_config(), 3, 1, 5).unwrap();
    let buf = filled(&agent, 50, 8);
    let seg = buf.segment_at(0, 20).unwrap();
    assert_eq!(seg.burn_in_len, 3);
    let states = agent.segment_states(&seg).unwrap();
    for t in 0..seg.train_len - 1 {
        // the state computed at train position t enters record t + 1
        let stored = &seg.train()[t + 1].hidden;
        for (a, b) in states.row(t).iter().zip(stored) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let gru = agent.encoder().unwrap();
    let h = unroll_records(gru, &seg.h0, seg.burn_in());
    for (a, b) in h.iter().zip(&seg.train()[0].hidden) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn collection_resets_state_at_episode_start() {
    let agent = Agent::new(small_config(), 3, 1, 5).unwrap();
    let mut env = Env::new(EnvKind::Pendulum, 0, 0.0).unwrap();
    let mut ro = Rollout::start(&agent, &mut env, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut records = Vec::new();
    for _ in 0..205 {
        records.push(collect_step(&agent, &mut env, &mut ro, ActionSource::Policy, &mut rng).unwrap().record);
    }
    for r in [&records[0], &records[200]] {
        assert_eq!(r.step_index, 0);
        assert!(r.hidden.iter().all(|&x| x == 0.0));
        assert_eq!(r.prev_action, vec![0.0]);
    }
    assert!(records[199].done);
    assert_eq!(records[200].episode_id, 1);
    assert_eq!(records[5].prev_action, records[4].action);
}

#[test]
fn deterministic_action_is_tanh_mean() {
    let agent = Agent::new(small_config(), 3, 1, 5).unwrap();
    let s = vec![0.3; 8];
    let mode = agent.policy_action(&s, None).unwrap();
    let zero_noise = agent.policy_action(&s, Some(&[0.0])).unwrap();
    assert_eq!(mode, zero_noise);
}

#[test]
fn alpha_stays_positive_and_targets_track() {
    let cfg = AgentConfig {
        lr_alpha: 0.5,
        ..small_config()
    };
    let mut agent = Agent::new(cfg, 3, 1, 9).unwrap();
    let buf = filled(&agent, 60, 2);
    let before = agent.q().target[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..20 {
        agent.train_step(&buf, t, &mut rng).unwrap();
        assert!(agent.alpha() > 0.0);
    }
    assert_ne!(agent.q().target[0], before);
    assert_ne!(agent.q().target[0], agent.q().online[0]);
    assert_eq!(agent.updates(), 20);
}

#[test]
fn memoryless_agent_trains() {
    let cfg = AgentConfig {
        encoder: EncoderKind::Memoryless,
        ..small_config()
    };
    let mut agent = Agent::new(cfg, 3, 1, 9).unwrap();
    assert_eq!(agent.state_dim(), 3);
    let buf = filled(&agent, 40, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(agent.train_step(&buf, 0, &mut rng).unwrap().is_finite());
}

#[test]
fn beta_only_changes_reward_not_model_loss() {
    let agent = Agent::new(small_config(), 3, 1, 9).unwrap();
    let buf = filled(&agent, 60, 2);
    let segs = buf.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let batch = agent.prepare_batch(&segs).unwrap();
    let report = |beta: f64| {
        let mut a = Agent::new(small_config(), 3, 1, 9).unwrap();
        a.train_on_batch(&batch, beta, 0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    };
    let (r1, r2) = (report(0.1), report(0.2));
    assert_eq!(r1.model_loss, r2.model_loss);
    assert_eq!(r1.mean_intrinsic_reward, r2.mean_intrinsic_reward);
    assert_ne!(r1.q_loss, r2.q_loss);
}

#[test]
fn checkpoint_round_trip() {
    let mut agent = Agent::new(small_config(), 3, 1, 9).unwrap();
    let buf = filled(&agent, 40, 2);
    agent.train_step(&buf, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&agent, dir.path(), 40).unwrap();
    let (back, manifest) = checkpoint::load(dir.path()).unwrap();
    assert_eq!(manifest.env_steps, 40);
    assert_eq!(back.updates(), 1);
    let h = vec![0.1; 8];
    let s1 = agent.encode(&[0.5, -0.2, 0.1], &[0.3], &h).unwrap();
    let s2 = back.encode(&[0.5, -0.2, 0.1], &[0.3], &h).unwrap();
    for (a, b) in s1.iter().zip(&s2) {
        assert!((a - b).abs() < 1e-5);
    }
    let a1 = agent.policy_action(&s1, None).unwrap();
    let a2 = back.policy_action(&s1, None).unwrap();
    assert!((a1[0] - a2[0]).abs() < 1e-4);
    assert!((agent.alpha() - back.alpha()).abs() < 1e-6);
}

#[test]
fn dimension_mismatch_is_reported() {
    let agent = Agent::new(small_config(), 3, 1, 9).unwrap();
    assert!(agent.encode(&[0.0; 6], &[0.0], &[0.0; 8]).is_err());
}
