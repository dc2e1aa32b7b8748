//! Environment contract fuzzing and oracle comparisons: an exact
//! dynamic-programming model of the cliff grid built independently from the
//! documented slip rule, and Monte-Carlo quantiles against the analytic
//! bandit inverse CDF.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iqn_core::distortion::ReturnQuantiles;
use iqn_core::env::{
    analytic_quantiles, mc_return_quantiles, parse_env, ChainMdp, CliffGrid, Env, KnownBandit,
    CLIFF_ACTION_DOWN, CLIFF_ACTION_RIGHT, CLIFF_ACTION_UP, CLIFF_HEIGHT, CLIFF_WIDTH,
};
use iqn_core::metrics::wasserstein1;

#[test]
fn reset_step_contract_fuzz() {
    let envs: Vec<Box<dyn Env>> = vec![
        Box::new(KnownBandit::risky()),
        Box::new(ChainMdp::new(6, 0.8).unwrap()),
        Box::new(CliffGrid::new(0.1).unwrap()),
    ];
    for mut env in envs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        let dim = env.state_dim();
        let actions = env.action_count();
        let limit = env.step_limit();
        let mut state = env.reset();
        let mut episode_steps = 0usize;
        for _ in 0..100_000 {
            assert_eq!(state.len(), dim);
            let action = rng.random_range(0..actions);
            let outcome = env.step(action, &mut rng).unwrap();
            episode_steps += 1;
            assert!(outcome.reward.is_finite());
            assert_eq!(outcome.state.len(), dim);
            assert!(episode_steps <= limit, "episode exceeded the step limit");
            if outcome.truncated {
                assert!(!outcome.terminal, "truncation must be non-terminal");
                assert_eq!(episode_steps, limit);
            }
            if outcome.episode_over() {
                // the contract forbids stepping a finished episode
                assert!(env.step(action, &mut rng).is_err());
                state = env.reset();
                episode_steps = 0;
            } else {
                state = outcome.state;
            }
        }
    }
}

/// Exact transition model of the cliff grid re-derived from the documented
/// dynamics: move in the chosen direction, except with probability p the
/// move is replaced by one of the two perpendicular directions (p/2 each);
/// off-grid moves stay put; cliff cells pay -100 and absorb, the goal pays
/// -1 and absorbs, every other move pays -1.
struct CliffModel {
    slip: f64,
}

#[derive(Clone, Copy)]
struct Outcome {
    prob: f64,
    cell: (usize, usize),
    reward: f64,
    done: bool,
}

impl CliffModel {
    fn shift(row: usize, col: usize, dir: usize) -> (usize, usize) {
        let (r, c) = (row as isize, col as isize);
        let (nr, nc) = match dir {
            0 => (r - 1, c),
            1 => (r, c + 1),
            2 => (r + 1, c),
            _ => (r, c - 1),
        };
        if nr < 0 || nr >= CLIFF_HEIGHT as isize || nc < 0 || nc >= CLIFF_WIDTH as isize {
            (row, col)
        } else {
            (nr as usize, nc as usize)
        }
    }

    fn outcomes(&self, row: usize, col: usize, action: usize) -> Vec<Outcome> {
        let perpendicular = if action == 0 || action == 2 { [3, 1] } else { [0, 2] };
        let mut raw = vec![(1.0 - self.slip, action)];
        if self.slip > 0.0 {
            raw.push((self.slip / 2.0, perpendicular[0]));
            raw.push((self.slip / 2.0, perpendicular[1]));
        }
        raw.into_iter()
            .map(|(prob, dir)| {
                let cell = Self::shift(row, col, dir);
                let on_cliff = cell.0 == CLIFF_HEIGHT - 1 && cell.1 > 0 && cell.1 < CLIFF_WIDTH - 1;
                let on_goal = cell.0 == CLIFF_HEIGHT - 1 && cell.1 == CLIFF_WIDTH - 1;
                Outcome {
                    prob,
                    cell,
                    reward: if on_cliff { -100.0 } else { -1.0 },
                    done: on_cliff || on_goal,
                }
            })
            .collect()
    }

    /// Expected return of a deterministic policy from the start cell by
    /// iterative policy evaluation.
    fn policy_value(&self, policy: &dyn Fn(usize, usize) -> usize, gamma: f64) -> f64 {
        let mut values = vec![0.0f64; CLIFF_HEIGHT * CLIFF_WIDTH];
        for _ in 0..5_000 {
            let mut next = values.clone();
            for row in 0..CLIFF_HEIGHT {
                for col in 0..CLIFF_WIDTH {
                    let absorbing = row == CLIFF_HEIGHT - 1 && col > 0;
                    if absorbing {
                        next[row * CLIFF_WIDTH + col] = 0.0;
                        continue;
                    }
                    let mut v = 0.0;
                    for o in self.outcomes(row, col, policy(row, col)) {
                        v += o.prob * o.reward;
                        if !o.done {
                            v += o.prob * gamma * values[o.cell.0 * CLIFF_WIDTH + o.cell.1];
                        }
                    }
                    next[row * CLIFF_WIDTH + col] = v;
                }
            }
            values = next;
        }
        values[(CLIFF_HEIGHT - 1) * CLIFF_WIDTH]
    }
}

fn edge_policy(row: usize, col: usize) -> usize {
    // hug the cliff: climb one cell, run along row 2, drop into the goal
    if col == CLIFF_WIDTH - 1 {
        CLIFF_ACTION_DOWN
    } else if row < CLIFF_HEIGHT - 2 {
        CLIFF_ACTION_DOWN
    } else if row == CLIFF_HEIGHT - 1 {
        CLIFF_ACTION_UP
    } else {
        CLIFF_ACTION_RIGHT
    }
}

fn safe_policy(row: usize, col: usize) -> usize {
    // top route: climb to row 0, run right, descend in the last column
    if col == CLIFF_WIDTH - 1 {
        CLIFF_ACTION_DOWN
    } else if row > 0 && col == 0 {
        CLIFF_ACTION_UP
    } else if row > 0 {
        CLIFF_ACTION_UP
    } else {
        CLIFF_ACTION_RIGHT
    }
}

#[test]
fn dp_oracle_pronounces_the_cliff_path_worse_under_slip() {
    let model = CliffModel { slip: 0.1 };
    let edge = model.policy_value(&edge_policy, 1.0);
    let safe = model.policy_value(&safe_policy, 1.0);
    assert!(
        edge < safe,
        "cliff-hugging EV {edge} should be below safe-path EV {safe}"
    );
    // without slip the ordering flips: the short path is better
    let det = CliffModel { slip: 0.0 };
    let edge0 = det.policy_value(&edge_policy, 1.0);
    let safe0 = det.policy_value(&safe_policy, 1.0);
    assert!((edge0 - -13.0).abs() < 1e-9, "edge path: {edge0}");
    assert!((safe0 - -17.0).abs() < 1e-9, "safe path: {safe0}");
}

/// The env's own simulator agrees with the independent DP model.
#[test]
fn simulated_policy_value_matches_dp_model() {
    let env = CliffGrid::new(0.1).unwrap();
    let policy = |state: &[f64]| {
        let idx = state.iter().position(|&v| v == 1.0).unwrap();
        safe_policy(idx / CLIFF_WIDTH, idx % CLIFF_WIDTH)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let episodes = 40_000;
    let q = mc_return_quantiles(&env, &policy, 1.0, episodes, &[0.5], &mut rng).unwrap();
    let _median = q.values()[0];
    // mean comparison needs the sample mean, not a quantile: rerun cheaply
    let mut mean = 0.0;
    let mut env2: Box<dyn Env> = Box::new(env);
    for _ in 0..episodes {
        let mut state = env2.reset();
        let mut ret = 0.0;
        loop {
            let o = env2.step(policy(&state), &mut rng).unwrap();
            ret += o.reward;
            if o.episode_over() {
                break;
            }
            state = o.state;
        }
        mean += ret;
    }
    mean /= episodes as f64;
    let dp = CliffModel { slip: 0.1 }.policy_value(&safe_policy, 1.0);
    // 40k episodes of a +/- ~8 spread distribution: 5 sigma is well under 0.5
    assert!((mean - dp).abs() < 0.5, "simulated {mean} vs dp {dp}");
}

#[test]
fn mc_quantiles_converge_to_analytic_inverse_cdf() {
    let bandit = KnownBandit::bernoulli();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = |_: &[f64]| 0usize;
    // stay clear of the CDF jump at tau = 0.45
    let taus = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
    let mc = mc_return_quantiles(&bandit, &policy, 1.0, 1_000_000, &taus, &mut rng).unwrap();
    let exact = analytic_quantiles(&bandit, 0, &taus).unwrap();
    let sup = mc
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(sup < 0.01, "sup distance {sup}");
    assert!(wasserstein1(mc.values(), exact.values()).unwrap() < 0.01);
}

#[test]
fn analytic_quantiles_are_right_continuous_at_atoms() {
    let bandit = KnownBandit::bernoulli();
    let q = analytic_quantiles(&bandit, 0, &[0.45, 0.45 + 1e-12]).unwrap();
    assert_eq!(q.values(), &[0.0, 1.0]);
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let q = analytic_quantiles(&bandit, 0, &grid).unwrap();
    // non-decreasing by ReturnQuantiles construction; double-check anyway
    assert!(q.values().windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn chain_and_env_parsing_round_trip() {
    let mut env = parse_env("chain:L=5,p=1.0").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = env.reset();
    assert_eq!(state, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let mut ret = 0.0;
    let mut discount = 1.0;
    loop {
        let o = env.step(1, &mut rng).unwrap();
        ret += discount * o.reward;
        discount *= 0.9;
        if o.episode_over() {
            break;
        }
        state = o.state;
    }
    assert_eq!(state, vec![0.0, 0.0, 0.0, 0.0, 1.0], "episode ends leaving the far end");
    assert!((ret - 0.9f64.powi(4)).abs() < 1e-12);
}

#[test]
fn degenerate_mc_distribution_is_a_point_mass() {
    let env = ChainMdp::new(4, 1.0).unwrap();
    let policy = |_: &[f64]| 1usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = mc_return_quantiles(&env, &policy, 0.9, 200, &[0.1, 0.5, 0.9], &mut rng).unwrap();
    let expect = 0.9f64.powi(3);
    for &v in q.values() {
        assert!((v - expect).abs() < 1e-12);
    }
    let rq = ReturnQuantiles::new(q.values().to_vec()).unwrap();
    assert_eq!(rq.mean(), expect);
}
