use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rmc::agent::{beta_schedule, RoutingScheme};
use rmc::diff::{grad_check, DiffError, Tape, Tensor, Var};
use rmc::envs::normalized_score;
use rmc::replay::{ReplayBuffer, ReplayConfig, ReplayStrategy, StepRecord};
use rmc::run::RunConfig;
use rmc::stats;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn data(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

/// Scalar readout that weights each element differently.
fn readout(t: &mut Tape, x: Var) -> Result<Var, DiffError> {
    let n = t.value(x).len();
    let shape = t.value(x).shape().to_vec();
    let w = t.constant(tensor(&shape, (0..n).map(|i| 0.3 + 0.1 * i as f64).collect()));
    let p = t.mul(x, w)?;
    Ok(t.sum(p))
}

const TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unary_primitives_match_finite_differences(x in data(6), op in 0usize..7) {
        let params = [tensor(&[2, 3], x)];
        let err = grad_check(
            |t, v| {
                let y = match op {
                    0 => t.tanh(v[0]),
                    1 => t.sigmoid(v[0]),
                    2 => t.exp(v[0]),
                    3 => t.square(v[0]),
                    4 => t.softplus(v[0]),
                    5 => {
                        // log of a strictly positive input
                        let e = t.exp(v[0]);
                        t.log(e)
                    }
                    _ => t.norm_last(v[0])?,
                };
                readout(t, y)
            },
            &params,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < TOL, "op {op}: {err}");
    }

    #[test]
    fn binary_primitives_match_finite_differences(a in data(6), b in data(6), c in data(12), op in 0usize..6) {
        // keep min away from ties, where it is not differentiable
        prop_assume!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() > 1e-3));
        let params = [tensor(&[2, 3], a), tensor(&[2, 3], b), tensor(&[3, 4], c)];
        let err = grad_check(
            |t, v| {
                let y = match op {
                    0 => t.add(v[0], v[1])?,
                    1 => t.sub(v[0], v[1])?,
                    2 => t.mul(v[0], v[1])?,
                    3 => t.min(v[0], v[1])?,
                    4 => t.concat_last(&[v[0], v[1]])?,
                    _ => t.matmul(v[0], v[2])?,
                };
                readout(t, y)
            },
            &params,
            1e-5,
        )
        .unwrap();
        prop_assert!(err < TOL, "op {op}: {err}");
    }

    #[test]
    fn stop_gradient_blocks_exactly(x in data(4)) {
        let mut t = Tape::new();
        let p = t.param(tensor(&[4], x));
        let s = t.stop_gradient(p);
        let y = t.square(s);
        let y = t.sum(y);
        let g = t.backward(y).unwrap().get(p);
        prop_assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn only_tabled_routings_are_valid(m: bool, v: bool, p: bool) {
        let tabled = RoutingScheme::all().any(|(_, s)| (s.model_into_rnn, s.value_into_rnn, s.policy_into_rnn) == (m, v, p));
        prop_assert_eq!(RoutingScheme::new(m, v, p).is_ok(), tabled);
    }

    #[test]
    fn scheme_ids_outside_range_rejected(id in 7u8..=255) {
        prop_assert!(RoutingScheme::from_id(id).is_err());
    }

    #[test]
    fn beta_decays_monotonically(beta0 in 0.0..5.0f64, horizon in 1usize..10_000, t in 0usize..20_000) {
        let b = beta_schedule(t, beta0, horizon);
        prop_assert!(b >= 0.0 && b <= beta0);
        prop_assert!(beta_schedule(t + 1, beta0, horizon) <= b);
        if t >= horizon {
            prop_assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn normalized_score_is_affine(random in -2000.0..-500.0f64, gap in 1.0..1000.0f64, k in -1.0..2.0f64) {
        let reference = random + gap;
        let s = normalized_score(random + k * gap, random, reference).unwrap();
        prop_assert!((s - k).abs() < 1e-9);
        prop_assert!(normalized_score(0.0, reference, random).is_err());
    }

    #[test]
    fn signed_rank_p_value_is_a_probability(x in prop::collection::vec(-5.0..5.0f64, 1..10), shift in -1.0..1.0f64) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + shift + 0.01 * i as f64).collect();
        let r = stats::signed_rank_greater(&x, &y);
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn run_config_text_round_trips(
        scheme in 1u8..=6,
        beta0 in 0.0..2.0f64,
        p in 0.0..=1.0f64,
        seed: u64,
        heads in prop::collection::vec(1usize..64, 1..4),
    ) {
        let mut cfg = RunConfig::default();
        cfg.set("scheme", &scheme.to_string()).unwrap();
        cfg.set("beta0", &beta0.to_string()).unwrap();
        cfg.set("flicker_p", &p.to_string()).unwrap();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.agent.head_hidden = heads;
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "echo").unwrap();
        prop_assert_eq!(back, cfg);
    }
}

/// Episode lengths and terminal flags of a synthetic replay stream.
fn episodes() -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((1usize..40, prop::bool::weighted(0.8)), 1..12)
}

fn fill(cfg: ReplayConfig, eps: &[(usize, bool)]) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(cfg).unwrap();
    for (id, &(len, terminated)) in eps.iter().enumerate() {
        for t in 0..len {
            buf.append(StepRecord {
                obs: vec![t as f64, id as f64],
                prev_action: vec![0.0],
                action: vec![0.1],
                next_obs: vec![t as f64 + 1.0, id as f64],
                reward: -1.0,
                done: terminated && t + 1 == len,
                hidden: vec![id as f64 + 0.01 * t as f64; 3],
                episode_id: id as u64,
                step_index: t,
            })
            .unwrap();
        }
    }
    buf
}

fn strategy() -> impl Strategy<Value = ReplayStrategy> {
    prop_oneof![
        Just(ReplayStrategy::BurnIn),
        Just(ReplayStrategy::StoredState),
        Just(ReplayStrategy::ZeroStart),
        Just(ReplayStrategy::Episode),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segments_stay_inside_one_episode(
        eps in episodes(),
        burn in 0usize..6,
        train in 1usize..10,
        capacity in 20usize..200,
        strat in strategy(),
        seed: u64,
    ) {
        let cfg = ReplayConfig {
            capacity,
            burn_in_len: burn,
            train_len: train,
            strategy: strat,
            ..ReplayConfig::new(2, 1, 3)
        };
        let buf = fill(cfg, &eps);
        prop_assert!(buf.len() <= capacity.max(eps.last().unwrap().0));
        prop_assert_eq!(buf.valid_segment_starts().len(), buf.num_sampleable());
        if buf.num_sampleable() == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in buf.sample_batch(16, &mut rng).unwrap() {
            let id = seg.records[0].episode_id;
            prop_assert!(seg.records.iter().all(|r| r.episode_id == id));
            prop_assert!(seg.records.windows(2).all(|w| w[1].step_index == w[0].step_index + 1));
            prop_assert!(seg.records[..seg.len() - 1].iter().all(|r| !r.done));
            prop_assert_eq!(seg.len(), seg.burn_in_len + seg.train_len);
            prop_assert!(seg.train_len >= 1);
            let t0 = seg.records[seg.burn_in_len].step_index;
            match strat {
                ReplayStrategy::BurnIn => {
                    prop_assert_eq!(seg.burn_in_len, burn.min(t0));
                    prop_assert_eq!(&seg.h0, &seg.records[0].hidden);
                }
                ReplayStrategy::StoredState => {
                    prop_assert_eq!(seg.burn_in_len, 0);
                    prop_assert_eq!(&seg.h0, &seg.records[0].hidden);
                }
                ReplayStrategy::ZeroStart => {
                    prop_assert_eq!(seg.burn_in_len, 0);
                    prop_assert!(seg.h0.iter().all(|&h| h == 0.0));
                }
                ReplayStrategy::Episode => {
                    prop_assert_eq!(t0, 0);
                    prop_assert!(seg.records.last().unwrap().done);
                }
            }
            if strat != ReplayStrategy::Episode {
                prop_assert!(seg.train_len <= train);
            }
        }
    }

    #[test]
    fn dump_and_load_preserve_samples(eps in episodes(), seed: u64) {
        let buf = fill(ReplayConfig::new(2, 1, 3), &eps);
        let dir = tempfile::tempdir().unwrap();
        buf.dump(dir.path()).unwrap();
        let back = ReplayBuffer::load(dir.path()).unwrap();
        prop_assert_eq!(back.valid_segment_starts(), buf.valid_segment_starts());
        if buf.num_sampleable() > 0 {
            let a = buf.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = back.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.len(), y.len());
                for (r, s) in x.records.iter().zip(&y.records) {
                    prop_assert_eq!(r.step_index, s.step_index);
                    prop_assert_eq!(r.done, s.done);
                    // stored as f32
                    prop_assert!(r.hidden.iter().zip(&s.hidden).all(|(p, q)| (p - q).abs() < 1e-6));
                }
            }
        }
    }
}
