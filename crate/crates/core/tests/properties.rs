use procalloc::baselines::{fifo_action, spt_action};
use procalloc::dqn::{Experience, ReplayMemory};
use procalloc::neural::{argmax, load_params, save_params, NetworkParams};
use procalloc::process_model::{load_suite, paper_suite};
use procalloc::sim_engine::{decode_action, encode_action, Action, Encoding, Engine, EngineConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn engine(seed: u64, arrival_probability: f64, cap: f64) -> Engine {
    let config = EngineConfig {
        arrival_probability,
        enabled_duration_cap: cap,
        encoding: Encoding::A10,
        seed,
    };
    Engine::new(paper_suite(), config).unwrap()
}

fn is_valid(engine: &Engine, action: Action) -> bool {
    match action {
        Action::NoOp => true,
        Action::Assign { resource, task } => {
            let st = engine.state();
            st.free_resources.contains(&resource)
                && engine.eligibility().is_eligible(resource, task)
                && st.enabled.iter().any(|i| i.task == task)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariants_hold_under_random_actions(
        seed in any::<u64>(),
        p in 0.0f64..=1.0,
        cap in 10.0f64..500.0,
        actions in prop::collection::vec(0usize..25, 1..300),
    ) {
        let mut e = engine(seed, p, cap);
        e.reset();
        for a in actions {
            let (state, reward) = e.step_index(a).unwrap();
            prop_assert!(reward >= 0.0);
            prop_assert_eq!(state.values.len(), e.state_width());
            let v = e.invariant_violations();
            prop_assert!(v.is_empty(), "{:?}", v);
            let zeta: f64 = state.values[e.resource_count()..].iter().sum();
            if e.state().enabled.is_empty() {
                prop_assert_eq!(zeta, 0.0);
            } else {
                prop_assert!((zeta - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_assignment_behaves_as_noop(seed in any::<u64>(), warmup in 0usize..80, probe in 0usize..24) {
        let mut e = engine(seed, 0.8, 400.0);
        e.reset();
        for t in 0..warmup {
            e.step_index((t * 7) % 25).unwrap();
        }
        let action = e.decode_action(probe).unwrap();
        prop_assume!(!is_valid(&e, action));
        let mut noop = e.clone();
        let a = e.step(action).unwrap();
        let b = noop.step(Action::NoOp).unwrap();
        prop_assert_eq!(a, b);
        for _ in 0..20 {
            prop_assert_eq!(e.step(Action::NoOp).unwrap(), noop.step(Action::NoOp).unwrap());
        }
    }

    #[test]
    fn action_index_round_trips(r in 1usize..8, t in 1usize..12, raw in any::<usize>()) {
        let n = r * t + 1;
        let index = raw % n;
        let action = decode_action(index, r, t).unwrap();
        prop_assert_eq!(encode_action(action, r, t), index);
        prop_assert_eq!(action == Action::NoOp, index == r * t);
        prop_assert!(decode_action(n, r, t).is_err());
    }

    #[test]
    fn suite_json_round_trips(scale in 0.5f64..2.0, freq in 0.1f64..5.0) {
        let mut suite = paper_suite();
        for process in &mut suite.processes {
            process.frequency *= freq;
            for task in &mut process.tasks {
                task.mean_duration *= scale;
                task.duration_std *= scale;
            }
        }
        let back = load_suite(&suite.to_json()).unwrap();
        prop_assert_eq!(back, suite);
    }

    #[test]
    fn baselines_are_valid_and_pure(seed in any::<u64>(), steps in 0usize..200) {
        let mut e = engine(seed, 0.9, 400.0);
        e.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            e.step_index(rand::Rng::random_range(&mut rng, 0..25)).unwrap();
        }
        let view = e.observe_privileged();
        for rule in [fifo_action as fn(&_) -> Action, spt_action] {
            let a = rule(&view);
            prop_assert_eq!(a, rule(&view));
            prop_assert!(is_valid(&e, a));
            let has_work = view.enabled.iter().any(|entry| {
                view.free_resources.iter().any(|&r| view.eligibility.is_eligible(r, entry.task))
            });
            prop_assert_eq!(a != Action::NoOp, has_work);
        }
    }

    #[test]
    fn argmax_survives_monotone_transforms(values in prop::collection::vec(-1e3f64..1e3, 1..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = argmax(&values);
        let affine: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let cubed: Vec<f64> = values.iter().map(|v| v.powi(3)).collect();
        prop_assert_eq!(argmax(&affine), base);
        prop_assert_eq!(argmax(&cubed), base);
        prop_assert!(values.iter().all(|&v| v <= values[base]));
        prop_assert!(values[..base].iter().all(|&v| v < values[base]));
    }

    #[test]
    fn replay_keeps_newest(capacity in 1usize..50, pushes in 0usize..200) {
        let mut memory = ReplayMemory::<f32>::new(capacity);
        for i in 0..pushes {
            memory.push(Experience { state: vec![i as f32], action: i, reward: 0.0, next_state: vec![] });
        }
        prop_assert_eq!(memory.len(), pushes.min(capacity));
        let mut kept: Vec<usize> = memory.iter().map(|e| e.action).collect();
        kept.sort_unstable();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(kept, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips(sizes in prop::collection::vec(1usize..9, 2..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NetworkParams::<f32>::random(&sizes, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_params(&params, &path).unwrap();
        let back = load_params(&path).unwrap();
        prop_assert_eq!(back.layer_sizes(), params.layer_sizes());
        let x: Vec<f32> = (0..sizes[0]).map(|i| i as f32 * 0.25 - 1.0).collect();
        let y0 = params.predict_one(&x).unwrap();
        let y1 = back.predict_one(&x).unwrap();
        prop_assert_eq!(
            y0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
