//! The DQN-style control loop around the quantile losses: replay buffer,
//! epsilon-greedy risk-sensitive acting, target-network synchronization and
//! the per-step training iteration.
//!
//! Reproducibility contract: every source of randomness is a ChaCha stream
//! derived from the run seed (acting, loss tau draws, replay sampling, env
//! stochasticity, and separate streams for evaluation), so identical
//! (seed, config, env) yields bit-identical trajectories. Greedy evaluation
//! uses deterministic midpoint quadrature of the distorted expectation for
//! pointwise measures, falling back to sampling only for Norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamHyper, AdamState};
use crate::distortion::DistortionMeasure;
use crate::env::Env;
use crate::harness::{MetricsRow, RunMeta};
use crate::losses::{dqn_loss, iqn_loss, qr_loss, LossConfig};
use crate::networks::{
    q_beta_estimate, q_beta_quadrature, ArchitectureSpec, DqnNetwork, IqnNetwork, QrNetwork,
};
use crate::{Error, Result, TensorMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling; oldest entries are
/// evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
            inserted: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        if self.items.is_empty() {
            return Err(Error::invalid("cannot sample from an empty replay buffer"));
        }
        Ok((0..batch)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return Err(Error::invalid("epsilon bounds must lie in [0, 1]"));
        }
        if self.decay_steps == 0 {
            return Err(Error::invalid("epsilon decay steps must be at least 1"));
        }
        Ok(())
    }

    /// Linear interpolation from `start` to `end`, clamped at `end`.
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Iqn,
    Qr,
    Dqn,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "iqn" => Ok(Algorithm::Iqn),
            "qr" => Ok(Algorithm::Qr),
            "dqn" => Ok(Algorithm::Dqn),
            other => Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Iqn => "iqn",
            Algorithm::Qr => "qr",
            Algorithm::Dqn => "dqn",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub loss: LossConfig,
    pub epsilon: EpsilonSchedule,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// No gradient steps until the buffer holds this many transitions.
    pub warmup: usize,
    /// Target network overwritten every this many env steps.
    pub target_sync_period: usize,
    /// Env steps per gradient step.
    pub train_period: usize,
    /// Env steps between greedy evaluation blocks.
    pub eval_period: usize,
    pub eval_episodes: usize,
    /// Env steps between emitted metrics rows.
    pub metrics_period: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    /// Evaluate greedily under the policy measure (true) or risk-neutrally.
    pub eval_with_measure: bool,
}

impl Default for AgentConfig {
    /// Desk-scale defaults; the QR-DQN-lineage Atari values live in
    /// [`AdamHyper::default`] and are overridden here for small envs.
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Iqn,
            loss: LossConfig::default(),
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_steps: 10_000,
            },
            buffer_capacity: 10_000,
            batch_size: 32,
            warmup: 1_000,
            target_sync_period: 500,
            train_period: 1,
            eval_period: 1_000,
            eval_episodes: 5,
            metrics_period: 100,
            adam: AdamHyper::with_learning_rate(1e-3),
            seed: 1,
            eval_with_measure: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.epsilon.validate()?;
        self.adam.validate()?;
        if self.buffer_capacity == 0
            || self.batch_size == 0
            || self.warmup == 0
            || self.target_sync_period == 0
            || self.train_period == 0
            || self.eval_period == 0
            || self.eval_episodes == 0
            || self.metrics_period == 0
        {
            return Err(Error::invalid(
                "agent periods, sizes and warmup must all be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum PolicyNet {
    Iqn(IqnNetwork),
    Qr(QrNetwork),
    Dqn(DqnNetwork),
}

impl PolicyNet {
    pub fn init(algorithm: Algorithm, arch: ArchitectureSpec, n_quantiles: usize, seed: u64) -> Result<Self> {
        Ok(match algorithm {
            Algorithm::Iqn => PolicyNet::Iqn(IqnNetwork::init(arch, seed)?),
            Algorithm::Qr => PolicyNet::Qr(QrNetwork::init(arch, n_quantiles, seed)?),
            Algorithm::Dqn => PolicyNet::Dqn(DqnNetwork::init(arch, seed)?),
        })
    }

    pub fn action_count(&self) -> usize {
        match self {
            PolicyNet::Iqn(n) => n.spec().action_count,
            PolicyNet::Qr(n) => n.spec().action_count,
            PolicyNet::Dqn(n) => n.spec().action_count,
        }
    }

    pub fn params(&self) -> &TensorMap {
        match self {
            PolicyNet::Iqn(n) => n.params(),
            PolicyNet::Qr(n) => n.params(),
            PolicyNet::Dqn(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        match self {
            PolicyNet::Iqn(n) => n.params_mut(),
            PolicyNet::Qr(n) => n.params_mut(),
            PolicyNet::Dqn(n) => n.params_mut(),
        }
    }

    /// Behavior-time action values: the K-sample distorted expectation for
    /// IQN, the quantile mean for QR, raw Q for DQN.
    pub fn behavior_values(
        &self,
        state: &[f64],
        measure: &DistortionMeasure,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        match self {
            PolicyNet::Iqn(n) => q_beta_estimate(n, state, measure, k, rng),
            PolicyNet::Qr(n) => n.action_values(state),
            PolicyNet::Dqn(n) => n.action_values(state),
        }
    }

    /// Evaluation-time action values: deterministic midpoint quadrature for
    /// pointwise measures so converged policies act reproducibly.
    pub fn eval_values(
        &self,
        state: &[f64],
        measure: &DistortionMeasure,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        match self {
            PolicyNet::Iqn(n) => {
                if measure.is_pointwise() {
                    q_beta_quadrature(n, state, measure, k)
                } else {
                    q_beta_estimate(n, state, measure, k, rng)
                }
            }
            PolicyNet::Qr(n) => n.action_values(state),
            PolicyNet::Dqn(n) => n.action_values(state),
        }
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy risk-sensitive action selection; argmax ties break to the
/// lowest action index.
pub fn act(
    state: &[f64],
    net: &PolicyNet,
    measure: &DistortionMeasure,
    epsilon: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let actions = net.action_count();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..actions));
    }
    if actions == 1 {
        return Ok(0);
    }
    Ok(argmax_lowest(&net.behavior_values(state, measure, k, rng)?))
}

#[derive(Debug, Clone, Default)]
pub struct StepMetrics {
    pub loss: Option<f64>,
    /// Discounted return of an episode that ended on this step.
    pub episode_return: Option<f64>,
    pub epsilon: f64,
    pub hazard: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EvalStats {
    pub episodes: u64,
    pub steps: u64,
    pub mean_return: f64,
    pub hazards: u64,
    pub action_counts: Vec<u64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Owns one training run: networks, optimizer, replay buffer, rng streams
/// and both behavior and evaluation env instances.
pub struct Trainer {
    cfg: AgentConfig,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    online: PolicyNet,
    target: PolicyNet,
    adam: AdamState,
    replay: ReplayBuffer,
    rng_act: ChaCha8Rng,
    rng_tau: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    rng_env: ChaCha8Rng,
    rng_eval_act: ChaCha8Rng,
    rng_eval_env: ChaCha8Rng,
    env_steps: u64,
    grad_steps: u64,
    state: Vec<f64>,
    episode_return: f64,
    episode_discount: f64,
    pub behavior_hazards: u64,
    last_loss: Option<f64>,
    last_episode_return: Option<f64>,
}

impl Trainer {
    pub fn new(mut env: Box<dyn Env>, arch: ArchitectureSpec, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        if arch.state_dim != env.state_dim() || arch.action_count != env.action_count() {
            return Err(Error::invalid(format!(
                "architecture ({}, {}) does not match env ({}, {})",
                arch.state_dim,
                arch.action_count,
                env.state_dim(),
                env.action_count()
            )));
        }
        let online = PolicyNet::init(cfg.algorithm, arch, cfg.loss.n_online, cfg.seed)?;
        let target = online.clone();
        let eval_env = env.box_clone();
        let state = env.reset();
        Ok(Trainer {
            adam: AdamState::new(cfg.adam),
            replay: ReplayBuffer::new(cfg.buffer_capacity)?,
            rng_act: stream(cfg.seed, 1),
            rng_tau: stream(cfg.seed, 2),
            rng_replay: stream(cfg.seed, 3),
            rng_env: stream(cfg.seed, 4),
            rng_eval_act: stream(cfg.seed, 5),
            rng_eval_env: stream(cfg.seed, 6),
            env_steps: 0,
            grad_steps: 0,
            state,
            episode_return: 0.0,
            episode_discount: 1.0,
            behavior_hazards: 0,
            last_loss: None,
            last_episode_return: None,
            cfg,
            env,
            eval_env,
            online,
            target,
        })
    }

    pub fn online(&self) -> &PolicyNet {
        &self.online
    }

    pub fn target(&self) -> &PolicyNet {
        &self.target
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.value(self.env_steps)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn last_episode_return(&self) -> Option<f64> {
        self.last_episode_return
    }

    /// One env step, one replay insertion, and per the configured periods a
    /// gradient step and/or target sync.
    pub fn train_iteration(&mut self) -> Result<StepMetrics> {
        let epsilon = self.cfg.epsilon.value(self.env_steps);
        let action = act(
            &self.state,
            &self.online,
            &self.cfg.loss.policy_measure,
            epsilon,
            self.cfg.loss.k_policy,
            &mut self.rng_act,
        )?;
        let outcome = self.env.step(action, &mut self.rng_env)?;
        self.replay.push(Transition {
            state: std::mem::take(&mut self.state),
            action,
            reward: outcome.reward,
            next_state: outcome.state.clone(),
            terminal: outcome.terminal,
        });
        self.env_steps += 1;

        self.episode_return += self.episode_discount * outcome.reward;
        self.episode_discount *= self.cfg.loss.gamma;
        if outcome.hazard {
            self.behavior_hazards += 1;
        }
        let mut metrics = StepMetrics {
            epsilon,
            hazard: outcome.hazard,
            ..StepMetrics::default()
        };
        if outcome.episode_over() {
            metrics.episode_return = Some(self.episode_return);
            self.last_episode_return = Some(self.episode_return);
            self.episode_return = 0.0;
            self.episode_discount = 1.0;
            self.state = self.env.reset();
        } else {
            self.state = outcome.state;
        }

        if self.env_steps % self.cfg.train_period as u64 == 0 && self.replay.len() >= self.cfg.warmup
        {
            let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng_replay)?;
            let out = match (&self.online, &self.target) {
                (PolicyNet::Iqn(online), PolicyNet::Iqn(target)) => {
                    iqn_loss(online, target, &batch, &self.cfg.loss, &mut self.rng_tau)?
                }
                (PolicyNet::Qr(online), PolicyNet::Qr(target)) => {
                    qr_loss(online, target, &batch, &self.cfg.loss)?
                }
                (PolicyNet::Dqn(online), PolicyNet::Dqn(target)) => {
                    dqn_loss(online, target, &batch, &self.cfg.loss)?
                }
                _ => unreachable!("online and target algorithms always match"),
            };
            adam_step(self.online.params_mut(), &out.grads, &mut self.adam)?;
            self.grad_steps += 1;
            self.last_loss = Some(out.loss);
            metrics.loss = Some(out.loss);
        }

        if self.env_steps % self.cfg.target_sync_period as u64 == 0 {
            self.target = self.online.clone();
        }
        Ok(metrics)
    }

    /// Greedy (epsilon = 0) evaluation for a fixed number of episodes,
    /// scored by discounted risk-neutral return.
    pub fn evaluate_episodes(&mut self, episodes: usize) -> Result<EvalStats> {
        self.evaluate(EvalBudget::Episodes(episodes))
    }

    /// Greedy evaluation running whole episodes until at least `steps` env
    /// steps have been consumed.
    pub fn evaluate_steps(&mut self, steps: usize) -> Result<EvalStats> {
        self.evaluate(EvalBudget::Steps(steps))
    }

    fn evaluate(&mut self, budget: EvalBudget) -> Result<EvalStats> {
        let measure = if self.cfg.eval_with_measure {
            self.cfg.loss.policy_measure
        } else {
            DistortionMeasure::identity()
        };
        greedy_eval_loop(
            self.eval_env.as_mut(),
            &self.online,
            &measure,
            self.cfg.loss.k_policy,
            self.cfg.loss.gamma,
            budget,
            &mut self.rng_eval_act,
            &mut self.rng_eval_env,
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EvalBudget {
    Episodes(usize),
    Steps(usize),
}

#[allow(clippy::too_many_arguments)]
fn greedy_eval_loop(
    env: &mut dyn Env,
    net: &PolicyNet,
    measure: &DistortionMeasure,
    k: usize,
    gamma: f64,
    budget: EvalBudget,
    rng_act: &mut ChaCha8Rng,
    rng_env: &mut ChaCha8Rng,
) -> Result<EvalStats> {
    let mut stats = EvalStats {
        action_counts: vec![0; net.action_count()],
        ..EvalStats::default()
    };
    let mut total_return = 0.0;
    loop {
        match budget {
            EvalBudget::Episodes(n) => {
                if stats.episodes >= n as u64 {
                    break;
                }
            }
            EvalBudget::Steps(n) => {
                if stats.steps >= n as u64 {
                    break;
                }
            }
        }
        let mut state = env.reset();
        let mut ret = 0.0;
        let mut discount = 1.0;
        loop {
            let action = if net.action_count() == 1 {
                0
            } else {
                argmax_lowest(&net.eval_values(&state, measure, k, rng_act)?)
            };
            stats.action_counts[action] += 1;
            let outcome = env.step(action, rng_env)?;
            stats.steps += 1;
            if outcome.hazard {
                stats.hazards += 1;
            }
            ret += discount * outcome.reward;
            discount *= gamma;
            if outcome.episode_over() {
                break;
            }
            state = outcome.state;
        }
        stats.episodes += 1;
        total_return += ret;
    }
    stats.mean_return = if stats.episodes > 0 {
        total_return / stats.episodes as f64
    } else {
        0.0
    };
    Ok(stats)
}

/// Greedy evaluation of a standalone policy network on a fresh env instance,
/// for checkpoint inspection.
pub fn evaluate_policy(
    mut env: Box<dyn Env>,
    net: &PolicyNet,
    measure: &DistortionMeasure,
    k: usize,
    gamma: f64,
    budget: EvalBudget,
    seed: u64,
) -> Result<EvalStats> {
    greedy_eval_loop(
        env.as_mut(),
        net,
        measure,
        k,
        gamma,
        budget,
        &mut stream(seed, 5),
        &mut stream(seed, 6),
    )
}

pub struct TrainingOutput {
    pub trainer: Trainer,
    pub rows: Vec<MetricsRow>,
    /// (step, mean greedy eval return) at every evaluation point.
    pub eval_points: Vec<(u64, f64)>,
}

/// Full training run: interleaves training with periodic greedy evaluation
/// and emits metrics rows every `metrics_period` steps (plus the final step).
pub fn run_training(
    env: Box<dyn Env>,
    arch: ArchitectureSpec,
    cfg: AgentConfig,
    total_steps: usize,
    meta: &RunMeta,
) -> Result<TrainingOutput> {
    if total_steps == 0 {
        return Err(Error::invalid("total steps must be at least 1"));
    }
    let mut trainer = Trainer::new(env, arch, cfg)?;
    let mut rows = Vec::new();
    let mut eval_points = Vec::new();
    let mut last_eval: Option<f64> = None;
    for t in 1..=total_steps as u64 {
        let metrics = trainer.train_iteration()?;
        if t % trainer.cfg.eval_period as u64 == 0 {
            let stats = trainer.evaluate_episodes(trainer.cfg.eval_episodes)?;
            last_eval = Some(stats.mean_return);
            eval_points.push((t, stats.mean_return));
        }
        if t % trainer.cfg.metrics_period as u64 == 0 || t == total_steps as u64 {
            rows.push(MetricsRow {
                run_id: meta.run_id.clone(),
                seed: trainer.cfg.seed,
                env: meta.env.clone(),
                algorithm: trainer.cfg.algorithm.as_str().to_string(),
                measure: trainer.cfg.loss.policy_measure.to_string(),
                n_online: trainer.cfg.loss.n_online,
                n_target: trainer.cfg.loss.n_target,
                step: t,
                behavior_return: trainer.last_episode_return,
                eval_return: last_eval,
                loss: trainer.last_loss,
                epsilon: metrics.epsilon,
                aux: trainer.behavior_hazards,
            });
        }
    }
    Ok(TrainingOutput {
        trainer,
        rows,
        eval_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::KnownBandit;
    use crate::networks::{Embedding, MergeKind, Nonlinearity};

    fn bandit_arch(actions: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            state_dim: 1,
            action_count: actions,
            psi_hidden: vec![8],
            feature_dim: 8,
            embedding: Embedding::CosineBasis { n: 8 },
            nonlinearity: Nonlinearity::Relu,
            merge: MergeKind::Hadamard,
        }
    }

    fn constant_net(biases: &[f64]) -> PolicyNet {
        let mut net = IqnNetwork::init(bandit_arch(biases.len()), 0).unwrap();
        for t in net.params_mut().values_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        net.params_mut()
            .get_mut("head.1.b")
            .unwrap()
            .data_mut()
            .copy_from_slice(biases);
        PolicyNet::Iqn(net)
    }

    #[test]
    fn epsilon_one_explores_uniformly() {
        let net = constant_net(&[0.0, 0.0, 0.0, 0.0]);
        let measure = DistortionMeasure::identity();
        let mut rng = stream(9, 1);
        let mut counts = [0u64; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[act(&[1.0], &net, &measure, 1.0, 4, &mut rng).unwrap()] += 1;
        }
        for &c in &counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.25).abs() < 0.01, "fraction {frac}");
        }
    }

    #[test]
    fn greedy_argmax_with_tie_breaking() {
        let measure = DistortionMeasure::identity();
        let mut rng = stream(10, 1);
        let net = constant_net(&[0.5, 0.55]);
        assert_eq!(act(&[1.0], &net, &measure, 0.0, 8, &mut rng).unwrap(), 1);
        let tied = constant_net(&[0.7, 0.7, 0.2]);
        assert_eq!(act(&[1.0], &tied, &measure, 0.0, 8, &mut rng).unwrap(), 0);
    }

    #[test]
    fn greedy_choice_invariant_to_positive_scaling() {
        let measure = DistortionMeasure::identity();
        let mut rng = stream(11, 1);
        let a = act(&[1.0], &constant_net(&[0.1, 0.3, 0.2]), &measure, 0.0, 8, &mut rng).unwrap();
        let b = act(
            &[1.0],
            &constant_net(&[0.1 * 7.0, 0.3 * 7.0, 0.2 * 7.0]),
            &measure,
            0.0,
            8,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn epsilon_schedule_is_linear_and_clamped() {
        let s = EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            decay_steps: 100,
        };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.55).abs() < 1e-12);
        assert_eq!(s.value(100), 0.1);
        assert_eq!(s.value(10_000), 0.1);
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            buf.push(Transition {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: true,
            });
        }
        assert_eq!(buf.len(), 3);
        let present: Vec<f64> = buf.iter().map(|t| t.state[0]).collect();
        assert!(!present.contains(&0.0) && !present.contains(&1.0));
        for i in 2..5 {
            assert!(present.contains(&(i as f64)));
        }
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(20).unwrap();
        for i in 0..20 {
            buf.push(Transition {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: true,
            });
        }
        let mut rng = stream(12, 3);
        let mut counts = vec![0u64; 20];
        let draws = 100_000usize;
        for t in buf.sample(draws, &mut rng).unwrap() {
            counts[t.state[0] as usize] += 1;
        }
        // each slot within 5 sigma of draws/20
        let p = 1.0 / 20.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - draws as f64 * p).abs() < 5.0 * sigma,
                "slot {i}: {c}"
            );
        }
    }

    #[test]
    fn warmup_gates_gradient_steps() {
        let cfg = AgentConfig {
            warmup: 50,
            batch_size: 4,
            eval_period: 1_000_000,
            ..AgentConfig::default()
        };
        let mut trainer =
            Trainer::new(Box::new(KnownBandit::risky()), bandit_arch(2), cfg).unwrap();
        for _ in 0..49 {
            trainer.train_iteration().unwrap();
        }
        assert_eq!(trainer.grad_steps(), 0);
        trainer.train_iteration().unwrap();
        assert_eq!(trainer.grad_steps(), 1);
    }

    #[test]
    fn degenerate_sync_keeps_target_equal() {
        let cfg = AgentConfig {
            warmup: 1,
            batch_size: 2,
            target_sync_period: 1,
            eval_period: 1_000_000,
            ..AgentConfig::default()
        };
        let mut trainer =
            Trainer::new(Box::new(KnownBandit::risky()), bandit_arch(2), cfg).unwrap();
        for _ in 0..5 {
            trainer.train_iteration().unwrap();
            assert_eq!(trainer.online().params(), trainer.target().params());
        }
    }

    #[test]
    fn target_is_stale_between_syncs() {
        let cfg = AgentConfig {
            warmup: 1,
            batch_size: 2,
            target_sync_period: 10,
            eval_period: 1_000_000,
            ..AgentConfig::default()
        };
        let mut trainer =
            Trainer::new(Box::new(KnownBandit::risky()), bandit_arch(2), cfg).unwrap();
        trainer.train_iteration().unwrap();
        let snapshot = trainer.target().params().clone();
        for _ in 0..8 {
            trainer.train_iteration().unwrap();
            assert_eq!(trainer.target().params(), &snapshot, "target changed early");
        }
        assert_ne!(trainer.online().params(), &snapshot, "online never moved");
        trainer.train_iteration().unwrap(); // step 10: sync
        assert_eq!(trainer.online().params(), trainer.target().params());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let cfg = AgentConfig {
                warmup: 10,
                batch_size: 4,
                eval_period: 25,
                eval_episodes: 2,
                metrics_period: 10,
                seed: 77,
                ..AgentConfig::default()
            };
            let meta = RunMeta::new("t", "bandit:risky");
            let out = run_training(
                Box::new(KnownBandit::risky()),
                bandit_arch(2),
                cfg,
                120,
                &meta,
            )
            .unwrap();
            (
                out.rows
                    .iter()
                    .map(|r| (r.step, r.loss.map(f64::to_bits), r.eval_return.map(f64::to_bits)))
                    .collect::<Vec<_>>(),
                out.trainer.online().params().clone(),
            )
        };
        let (rows_a, params_a) = run();
        let (rows_b, params_b) = run();
        assert_eq!(rows_a, rows_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn invalid_config_fails_before_computation() {
        let cfg = AgentConfig {
            batch_size: 0,
            ..AgentConfig::default()
        };
        assert!(Trainer::new(Box::new(KnownBandit::risky()), bandit_arch(2), cfg).is_err());
    }
}
