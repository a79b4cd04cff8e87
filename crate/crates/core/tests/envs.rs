use std::collections::HashMap;

use fresh::envs::{
    optimal_return, AimLine, AimLineConfig, Environment, GateRun, GateRunConfig, SOLVER_DISCOUNT,
};
use fresh::oracle::{Oracle, OracleConfig, OracleLabel};
use proptest::prelude::*;

/// Best undiscounted and best discounted return from the current state, by
/// trying every action sequence (memoised on observation and step count).
struct Exhaustive {
    memo: HashMap<(Vec<u64>, usize), (f64, f64)>,
}

impl Exhaustive {
    fn new() -> Self {
        Exhaustive { memo: HashMap::new() }
    }

    fn key(obs: &[f64], steps: usize) -> (Vec<u64>, usize) {
        (obs.iter().map(|v| v.to_bits()).collect(), steps)
    }

    fn value(&mut self, env: &dyn Environment, obs: &[f64], steps: usize) -> (f64, f64) {
        let key = Self::key(obs, steps);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for a in 0..env.spec().action_count {
            let (u, d) = self.q(env, a, steps);
            best = (best.0.max(u), best.1.max(d));
        }
        self.memo.insert(key, best);
        best
    }

    fn q(&mut self, env: &dyn Environment, action: usize, steps: usize) -> (f64, f64) {
        let mut child = env.boxed_clone();
        let step = child.step(action).unwrap();
        if step.terminal {
            return (step.reward, step.reward);
        }
        let (u, d) = self.value(child.as_ref(), &step.next_observation, steps + 1);
        (step.reward + u, step.reward + SOLVER_DISCOUNT * d)
    }
}

fn small_aimline() -> AimLineConfig {
    AimLineConfig { positions: 4, rounds: 3, max_steps: 16, ..AimLineConfig::default() }
}

fn small_gaterun() -> GateRunConfig {
    GateRunConfig { width: 5, height: 8, gates: 2, min_half_width: 0, max_half_width: 1, max_shift: 3, gate_reward: 25.0 }
}

/// Along the solver's own rollout every chosen action must be optimal under
/// exhaustive search, and the rollout must reach the best total return.
fn check_solver(mut env: Box<dyn Environment>, seed: u64, discounted: bool) {
    let solver = env.solver(seed).unwrap();
    let (mut obs, _) = env.reset(seed);
    let mut search = Exhaustive::new();
    let (best_total, best_discounted) = search.value(env.as_ref(), &obs, 0);
    let v0 = solver.state_value(&obs).unwrap();
    if discounted {
        assert!((v0 - best_discounted).abs() < 1e-9, "seed {seed}: value {v0} vs exhaustive {best_discounted}");
    }
    let mut steps = 0;
    loop {
        let a = solver.optimal_action(&obs).unwrap();
        let qs: Vec<(f64, f64)> =
            (0..env.spec().action_count).map(|b| search.q(env.as_ref(), b, steps)).collect();
        let (pick, max) = if discounted {
            (qs[a].1, qs.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max))
        } else {
            (qs[a].0, qs.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max))
        };
        assert!(pick >= max - 1e-9, "seed {seed} step {steps}: action {a} scores {pick}, best {max}");
        let step = env.step(a).unwrap();
        steps += 1;
        obs = step.next_observation;
        if step.terminal {
            break;
        }
    }
    assert_eq!(optimal_return(env.as_mut(), seed).unwrap(), best_total, "seed {seed}");
}

#[test]
fn aimline_solver_matches_exhaustive_search() {
    for seed in 0..25 {
        check_solver(Box::new(AimLine::new(small_aimline()).unwrap()), seed, true);
    }
}

#[test]
fn gaterun_solver_matches_exhaustive_search() {
    for seed in 0..25 {
        check_solver(Box::new(GateRun::new(small_gaterun()).unwrap()), seed, false);
    }
}

#[test]
fn noiseless_oracle_labels_the_exhaustive_optimum() {
    let env = AimLine::new(small_aimline()).unwrap();
    let config = OracleConfig { reference_episodes: 5, ..OracleConfig::noiseless() };
    let mut oracle = Oracle::new(config, &env).unwrap();
    for seed in 0..10 {
        let mut env: Box<dyn Environment> = Box::new(AimLine::new(small_aimline()).unwrap());
        let (mut obs, _) = env.reset(seed);
        let mut search = Exhaustive::new();
        let solver = env.solver(seed).unwrap();
        for steps in 0.. {
            let qs: Vec<f64> = (0..4).map(|b| search.q(env.as_ref(), b, steps).1).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut good = 0;
            for (a, q) in qs.iter().enumerate() {
                match oracle.label_action(&obs, a, seed).unwrap() {
                    OracleLabel::Good => {
                        good += 1;
                        assert!(*q >= best - 1e-9);
                    }
                    OracleLabel::Bad => {}
                    OracleLabel::NotSure => panic!("noiseless oracle abstained"),
                }
            }
            assert_eq!(good, 1);
            let step = env.step(solver.optimal_action(&obs).unwrap()).unwrap();
            obs = step.next_observation;
            if step.terminal {
                break;
            }
        }
    }
}

fn transcript(env: &mut dyn Environment, seed: u64, actions: &[usize]) -> Vec<String> {
    let (obs, frame) = env.reset(seed);
    let mut out = vec![format!("{obs:?} {frame:?}")];
    let n = env.spec().action_count;
    for &a in actions {
        let step = env.step(a % n).unwrap();
        out.push(format!("{:?} {} {} {:?}", step.next_observation, step.reward, step.terminal, step.render));
        if step.terminal {
            break;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replays_are_identical(seed: u64, actions in prop::collection::vec(0usize..12, 1..60), aim: bool) {
        let make = || -> Box<dyn Environment> {
            if aim { Box::new(AimLine::new(AimLineConfig::default()).unwrap()) }
            else { Box::new(GateRun::new(GateRunConfig::default()).unwrap()) }
        };
        let (mut a, mut b) = (make(), make());
        prop_assert_eq!(transcript(a.as_mut(), seed, &actions), transcript(b.as_mut(), seed, &actions));
    }

    #[test]
    fn aimline_return_is_conserved_under_delay(seed: u64, actions in prop::collection::vec(0usize..4, 1..200)) {
        let config = AimLineConfig::default();
        let mut env = AimLine::new(config.clone()).unwrap();
        env.reset(seed);
        let pins = env.pins().to_vec();
        let (mut total, mut expected) = (0.0, 0.0);
        let mut pending = false;
        for &a in &actions {
            if a == 3 {
                let (pos, pin) = (env.position(), pins[env.round() - 1]);
                expected += (config.round_score - config.miss_cost * pos.abs_diff(pin) as f64).max(0.0);
                if pos == pin {
                    expected += config.strike_bonus;
                }
            }
            let step = env.step(a).unwrap();
            total += step.reward;
            pending = step.next_observation[2] == 1.0;
            if step.terminal {
                prop_assert!(!pending);
                break;
            }
        }
        let unpaid = if pending { config.strike_bonus } else { 0.0 };
        prop_assert!((total + unpaid - expected).abs() < 1e-9, "total {} expected {}", total, expected);
    }

    #[test]
    fn gaterun_pays_only_at_the_bottom(seed: u64, actions in prop::collection::vec(0usize..3, 40)) {
        let mut env = GateRun::new(GateRunConfig::default()).unwrap();
        env.reset(seed);
        let mut rewards = Vec::new();
        for &a in &actions {
            let step = env.step(a).unwrap();
            rewards.push(step.reward);
            if step.terminal {
                break;
            }
        }
        prop_assert_eq!(rewards.len(), 40);
        prop_assert!(rewards[..39].iter().all(|r| *r == 0.0));
        prop_assert_eq!(rewards[39], 25.0 * env.gates_passed() as f64 - 40.0);
    }
}
