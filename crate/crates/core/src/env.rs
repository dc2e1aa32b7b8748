//! Desk-scale environments with known or Monte-Carlo-computable return
//! distributions.
//!
//! Each environment documents its state encoding: bandits emit the constant
//! vector [1], chain and cliff cells are one-hot. Episodes that hit the step
//! limit are truncated: the episode is over for control purposes but the
//! transition is flagged non-terminal so bootstrapping continues through it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::distortion::ReturnQuantiles;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
    /// True when the env's hazardous terminal fired (cliff fall).
    pub hazard: bool,
}

impl StepOutcome {
    pub fn episode_over(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Env: Send {
    fn name(&self) -> String;
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn recommended_gamma(&self) -> f64;
    fn step_limit(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<StepOutcome>;
    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

fn check_action(action: usize, count: usize) -> Result<()> {
    if action >= count {
        return Err(Error::Env(format!(
            "action {action} out of range for {count} actions"
        )));
    }
    Ok(())
}

fn step_after_done() -> Error {
    Error::Env("step after episode end without reset".into())
}

// ---------------------------------------------------------------------------
// KnownBandit

/// Single-step bandit whose per-arm reward distributions are explicit lists
/// of (value, probability) atoms; the analytic oracle for return
/// distributions. State encoding: the constant vector [1].
#[derive(Debug, Clone)]
pub struct KnownBandit {
    label: String,
    arms: Vec<Vec<(f64, f64)>>,
    done: bool,
    started: bool,
}

impl KnownBandit {
    pub fn new(label: &str, arms: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::Env("bandit needs at least one arm".into()));
        }
        for (i, arm) in arms.iter().enumerate() {
            if arm.is_empty() {
                return Err(Error::Env(format!("arm {i} has no atoms")));
            }
            let total: f64 = arm.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Env(format!(
                    "arm {i} probabilities sum to {total}, expected 1"
                )));
            }
            if arm.iter().any(|&(v, p)| p <= 0.0 || !v.is_finite()) {
                return Err(Error::Env(format!(
                    "arm {i} needs positive probabilities and finite values"
                )));
            }
        }
        Ok(KnownBandit {
            label: label.to_string(),
            arms,
            done: false,
            started: false,
        })
    }

    /// Two arms: a safe Dirac at 0.5 and a risky Bernoulli paying 1 with
    /// probability 0.55.
    pub fn risky() -> Self {
        KnownBandit::new(
            "risky",
            vec![vec![(0.5, 1.0)], vec![(0.0, 0.45), (1.0, 0.55)]],
        )
        .expect("valid preset")
    }

    /// One arm: the Bernoulli paying 1 with probability 0.55.
    pub fn bernoulli() -> Self {
        KnownBandit::new("bernoulli", vec![vec![(0.0, 0.45), (1.0, 0.55)]]).expect("valid preset")
    }

    pub fn arm(&self, index: usize) -> Result<&[(f64, f64)]> {
        self.arms
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Env(format!("no arm {index}")))
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }
}

impl Env for KnownBandit {
    fn name(&self) -> String {
        format!("bandit:{}", self.label)
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_count(&self) -> usize {
        self.arms.len()
    }

    fn recommended_gamma(&self) -> f64 {
        1.0
    }

    fn step_limit(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.done = false;
        self.started = true;
        vec![1.0]
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(step_after_done());
        }
        check_action(action, self.arms.len())?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let arm = &self.arms[action];
        let mut reward = arm[arm.len() - 1].0;
        for &(v, p) in arm {
            acc += p;
            if u < acc {
                reward = v;
                break;
            }
        }
        self.done = true;
        Ok(StepOutcome {
            state: vec![1.0],
            reward,
            terminal: true,
            truncated: false,
            hazard: false,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

/// Exact generalized inverse CDF of a discrete arm distribution:
/// F^{-1}(tau) = min{z : F(z) >= tau}. Requires non-decreasing taus.
pub fn analytic_quantiles(bandit: &KnownBandit, arm: usize, taus: &[f64]) -> Result<ReturnQuantiles> {
    let atoms = bandit.arm(arm)?;
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("taus must be non-decreasing"));
    }
    let mut sorted: Vec<(f64, f64)> = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut values = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
        let mut cdf = 0.0;
        let mut value = sorted[sorted.len() - 1].0;
        for &(v, p) in &sorted {
            cdf += p;
            if cdf >= tau {
                value = v;
                break;
            }
        }
        values.push(value);
    }
    ReturnQuantiles::new(values)
}

// ---------------------------------------------------------------------------
// ChainMDP

/// A line of `length` non-terminal states. Action 1 moves forward with
/// probability `p_success` (otherwise the agent stays), action 0 moves back.
/// Arrival at state s pays `rewards[s]`; moving forward out of the last
/// state ends the episode and pays `terminal_reward`. One-hot states.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    length: usize,
    p_success: f64,
    rewards: Vec<f64>,
    terminal_reward: f64,
    position: usize,
    steps: usize,
    done: bool,
    started: bool,
}

impl ChainMdp {
    pub fn new(length: usize, p_success: f64) -> Result<Self> {
        if length < 2 {
            return Err(Error::Env(format!("chain length must be >= 2, got {length}")));
        }
        if !(p_success > 0.0 && p_success <= 1.0) {
            return Err(Error::Env(format!(
                "move-success probability must lie in (0, 1], got {p_success}"
            )));
        }
        Ok(ChainMdp {
            length,
            p_success,
            rewards: vec![0.0; length],
            terminal_reward: 1.0,
            position: 0,
            steps: 0,
            done: false,
            started: false,
        })
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.length];
        s[self.position] = 1.0;
        s
    }
}

impl Env for ChainMdp {
    fn name(&self) -> String {
        format!("chain:L={},p={}", self.length, self.p_success)
    }

    fn state_dim(&self) -> usize {
        self.length
    }

    fn action_count(&self) -> usize {
        2
    }

    fn recommended_gamma(&self) -> f64 {
        0.9
    }

    fn step_limit(&self) -> usize {
        4 * self.length
    }

    fn reset(&mut self) -> Vec<f64> {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.one_hot()
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(step_after_done());
        }
        check_action(action, 2)?;
        self.steps += 1;
        let moved = self.p_success >= 1.0 || rng.random::<f64>() < self.p_success;
        let mut reward = 0.0;
        let mut terminal = false;
        if moved {
            if action == 1 {
                if self.position + 1 == self.length {
                    reward = self.terminal_reward;
                    terminal = true;
                } else {
                    self.position += 1;
                    reward = self.rewards[self.position];
                }
            } else if self.position > 0 {
                self.position -= 1;
                reward = self.rewards[self.position];
            }
        }
        let truncated = !terminal && self.steps >= self.step_limit();
        self.done = terminal || truncated;
        Ok(StepOutcome {
            state: self.one_hot(),
            reward,
            terminal,
            truncated,
            hazard: false,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// CliffGrid

pub const CLIFF_HEIGHT: usize = 4;
pub const CLIFF_WIDTH: usize = 12;

/// The 4x12 cliff-walking grid. Start bottom-left, goal bottom-right, cliff
/// cells along the bottom edge between them. Every step pays -1; stepping
/// onto a cliff cell pays -100 and ends the episode. With probability `slip`
/// the agent moves in a uniformly random perpendicular direction instead of
/// the chosen one (never backward). Off-grid moves leave the agent in place.
/// One-hot states over the 48 cells.
#[derive(Debug, Clone)]
pub struct CliffGrid {
    slip: f64,
    row: usize,
    col: usize,
    steps: usize,
    done: bool,
    started: bool,
}

pub const CLIFF_ACTION_UP: usize = 0;
pub const CLIFF_ACTION_RIGHT: usize = 1;
pub const CLIFF_ACTION_DOWN: usize = 2;
pub const CLIFF_ACTION_LEFT: usize = 3;

impl CliffGrid {
    pub fn new(slip: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&slip) {
            return Err(Error::Env(format!(
                "slip probability must lie in [0, 0.5], got {slip}"
            )));
        }
        Ok(CliffGrid {
            slip,
            row: CLIFF_HEIGHT - 1,
            col: 0,
            steps: 0,
            done: false,
            started: false,
        })
    }

    pub fn is_cliff(row: usize, col: usize) -> bool {
        row == CLIFF_HEIGHT - 1 && col > 0 && col < CLIFF_WIDTH - 1
    }

    pub fn is_goal(row: usize, col: usize) -> bool {
        row == CLIFF_HEIGHT - 1 && col == CLIFF_WIDTH - 1
    }

    pub fn cell_index(row: usize, col: usize) -> usize {
        row * CLIFF_WIDTH + col
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut s = vec![0.0; CLIFF_HEIGHT * CLIFF_WIDTH];
        s[Self::cell_index(self.row, self.col)] = 1.0;
        s
    }

    /// Destination of moving one cell in `direction`; off-grid stays put.
    pub fn destination(row: usize, col: usize, direction: usize) -> (usize, usize) {
        match direction {
            CLIFF_ACTION_UP if row > 0 => (row - 1, col),
            CLIFF_ACTION_RIGHT if col + 1 < CLIFF_WIDTH => (row, col + 1),
            CLIFF_ACTION_DOWN if row + 1 < CLIFF_HEIGHT => (row + 1, col),
            CLIFF_ACTION_LEFT if col > 0 => (row, col - 1),
            _ => (row, col),
        }
    }
}

impl Env for CliffGrid {
    fn name(&self) -> String {
        format!("cliff:p={}", self.slip)
    }

    fn state_dim(&self) -> usize {
        CLIFF_HEIGHT * CLIFF_WIDTH
    }

    fn action_count(&self) -> usize {
        4
    }

    fn recommended_gamma(&self) -> f64 {
        0.99
    }

    fn step_limit(&self) -> usize {
        200
    }

    fn reset(&mut self) -> Vec<f64> {
        self.row = CLIFF_HEIGHT - 1;
        self.col = 0;
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.one_hot()
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Result<StepOutcome> {
        if self.done || !self.started {
            return Err(step_after_done());
        }
        check_action(action, 4)?;
        self.steps += 1;
        let direction = if self.slip > 0.0 {
            let u: f64 = rng.random();
            if u < self.slip {
                // perpendicular slip, both sides equally likely
                let first = u < self.slip * 0.5;
                match (action, first) {
                    (CLIFF_ACTION_UP | CLIFF_ACTION_DOWN, true) => CLIFF_ACTION_LEFT,
                    (CLIFF_ACTION_UP | CLIFF_ACTION_DOWN, false) => CLIFF_ACTION_RIGHT,
                    (_, true) => CLIFF_ACTION_UP,
                    (_, false) => CLIFF_ACTION_DOWN,
                }
            } else {
                action
            }
        } else {
            action
        };
        let (row, col) = Self::destination(self.row, self.col, direction);
        self.row = row;
        self.col = col;

        let (reward, terminal, hazard) = if Self::is_cliff(row, col) {
            (-100.0, true, true)
        } else if Self::is_goal(row, col) {
            (-1.0, true, false)
        } else {
            (-1.0, false, false)
        };
        let truncated = !terminal && self.steps >= self.step_limit();
        self.done = terminal || truncated;
        Ok(StepOutcome {
            state: self.one_hot(),
            reward,
            terminal,
            truncated,
            hazard,
        })
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------

/// Env selection grammar: `bandit:risky`, `bandit:bernoulli`,
/// `chain:L=5,p=1.0`, `cliff:p=0.1`.
pub fn parse_env(text: &str) -> Result<Box<dyn Env>> {
    let text = text.trim();
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    match kind {
        "bandit" => match rest {
            "risky" => Ok(Box::new(KnownBandit::risky())),
            "bernoulli" => Ok(Box::new(KnownBandit::bernoulli())),
            other => Err(Error::Env(format!("unknown bandit preset `{other}`"))),
        },
        "chain" => {
            let mut length = 5usize;
            let mut p = 1.0f64;
            for part in rest.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Env(format!("bad chain parameter `{part}`")))?;
                match k.trim() {
                    "L" => {
                        length = v.trim().parse().map_err(|_| {
                            Error::Env(format!("bad chain length `{v}`"))
                        })?
                    }
                    "p" => {
                        p = v.trim().parse().map_err(|_| {
                            Error::Env(format!("bad chain probability `{v}`"))
                        })?
                    }
                    other => return Err(Error::Env(format!("unknown chain parameter `{other}`"))),
                }
            }
            Ok(Box::new(ChainMdp::new(length, p)?))
        }
        "cliff" => {
            let mut slip = 0.0f64;
            for part in rest.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Env(format!("bad cliff parameter `{part}`")))?;
                match k.trim() {
                    "p" => {
                        slip = v.trim().parse().map_err(|_| {
                            Error::Env(format!("bad slip probability `{v}`"))
                        })?
                    }
                    other => return Err(Error::Env(format!("unknown cliff parameter `{other}`"))),
                }
            }
            Ok(Box::new(CliffGrid::new(slip)?))
        }
        other => Err(Error::Env(format!("unknown environment `{other}`"))),
    }
}

/// Empirical quantiles (order statistics at the requested non-decreasing tau
/// levels) of Monte-Carlo discounted returns from the start state.
pub fn mc_return_quantiles(
    env: &dyn Env,
    policy: &dyn Fn(&[f64]) -> usize,
    gamma: f64,
    episodes: usize,
    taus: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ReturnQuantiles> {
    if episodes == 0 {
        return Err(Error::invalid("episode count must be at least 1"));
    }
    if taus.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("taus must be non-decreasing"));
    }
    for &tau in taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
        }
    }
    let mut env = env.box_clone();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut discount = 1.0;
        let mut ret = 0.0;
        loop {
            let outcome = env.step(policy(&state), rng)?;
            ret += discount * outcome.reward;
            discount *= gamma;
            if outcome.episode_over() {
                break;
            }
            state = outcome.state;
        }
        returns.push(ret);
    }
    returns.sort_by(f64::total_cmp);
    let m = returns.len();
    let values = taus
        .iter()
        .map(|&tau| {
            let idx = if tau <= 0.0 {
                0
            } else {
                ((tau * m as f64).ceil() as usize - 1).min(m - 1)
            };
            returns[idx]
        })
        .collect();
    ReturnQuantiles::new(values)
}
