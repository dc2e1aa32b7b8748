//! Huber quantile regression losses.
//!
//! Three differentiable scalar losses share one graph-level construction of
//! the Huber quantile term rho^kappa_tau(delta):
//!
//! * `iqn_loss`: the sampled loss over fresh iid tau draws. Per batch
//!   element the outer sum over the N online samples is *not* averaged
//!   (only the N' target samples are), so loss magnitude scales with N;
//!   `LossConfig::normalize_by_n` opts into dividing by N as well.
//! * `qr_loss`: the fixed-midpoint baseline where both sample axes range
//!   over the N quantile midpoints.
//! * `dqn_loss`: the scalar Huber TD baseline.
//!
//! Target-side values enter the graphs as plain inputs, so no gradient ever
//! flows into the target network. Terminal transitions bootstrap nothing:
//! their target is the reward alone.
//!
//! The kink structure of rho is expressed with relu nodes
//! (|d| = relu(d) + relu(-d)), which keeps the whole loss inside the
//! autodiff graph and lets the gradient checker see every nonsmooth point.

use rand::Rng;

use crate::agent::Transition;
use crate::distortion::DistortionMeasure;
use crate::graph::{Graph, NodeId};
use crate::networks::{
    build_iqn_value, build_psi_head_value, expand_state_rows, tau_input_tensor, ArchitectureSpec,
    DqnNetwork, IqnNetwork, QrNetwork,
};
use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Online tau samples per transition (N).
    pub n_online: usize,
    /// Target tau' samples per transition (N').
    pub n_target: usize,
    /// Policy samples for the greedy next action (K).
    pub k_policy: usize,
    /// Huber threshold; 0 selects the pure pinball loss.
    pub kappa: f64,
    pub gamma: f64,
    /// Distortion measure for the greedy next action (and acting).
    pub policy_measure: DistortionMeasure,
    /// Divide the IQN loss by N as well, making it a mean over both axes.
    pub normalize_by_n: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            n_online: 8,
            n_target: 8,
            k_policy: 32,
            kappa: 1.0,
            gamma: 0.99,
            policy_measure: DistortionMeasure::identity(),
            normalize_by_n: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_online == 0 || self.n_target == 0 || self.k_policy == 0 {
            return Err(Error::invalid("sample counts N, N', K must be at least 1"));
        }
        if self.kappa < 0.0 || !self.kappa.is_finite() {
            return Err(Error::invalid(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) && self.gamma != 1.0 {
            return Err(Error::invalid(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// The Huber quantile loss rho^kappa_tau(delta): the asymmetric weight
/// |tau - I{delta < 0}| times L_kappa(delta)/kappa, with the kappa = 0 case
/// defined by the analytic limit (the pinball loss).
pub fn huber_quantile(delta: f64, tau: f64, kappa: f64) -> Result<f64> {
    if kappa < 0.0 || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    let weight = if delta < 0.0 { 1.0 - tau } else { tau };
    let a = delta.abs();
    Ok(if kappa == 0.0 {
        weight * a
    } else {
        let l = if a <= kappa {
            0.5 * a * a
        } else {
            kappa * (a - 0.5 * kappa)
        };
        weight * l / kappa
    })
}

/// Quantile midpoints tau_hat_i = (tau_{i-1} + tau_i)/2 with tau_i = i/N:
/// strictly increasing and symmetric about one half.
pub fn qr_midpoints(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("midpoint count must be at least 1"));
    }
    Ok((1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect())
}

/// Per-batch-element tau draws for one IQN loss evaluation. Production code
/// samples these through [`TauSamples::draw`]; tests may pin them.
#[derive(Debug, Clone)]
pub struct TauSamples {
    /// B x N online taus.
    pub online: Vec<Vec<f64>>,
    /// B x N' target taus.
    pub target: Vec<Vec<f64>>,
    /// B x K policy taus, already passed through the measure.
    pub policy: Vec<Vec<f64>>,
}

impl TauSamples {
    pub fn draw(cfg: &LossConfig, batch_len: usize, rng: &mut impl Rng) -> Self {
        let mut online = Vec::with_capacity(batch_len);
        let mut target = Vec::with_capacity(batch_len);
        let mut policy = Vec::with_capacity(batch_len);
        for _ in 0..batch_len {
            online.push((0..cfg.n_online).map(|_| rng.random::<f64>()).collect());
            target.push((0..cfg.n_target).map(|_| rng.random::<f64>()).collect());
            policy.push(
                (0..cfg.k_policy)
                    .map(|_| cfg.policy_measure.sample_tau(rng))
                    .collect(),
            );
        }
        TauSamples { online, target, policy }
    }

    fn validate(&self, cfg: &LossConfig, batch_len: usize) -> Result<()> {
        let check = |name: &str, rows: &[Vec<f64>], width: usize| -> Result<()> {
            if rows.len() != batch_len || rows.iter().any(|r| r.len() != width) {
                return Err(Error::invalid(format!(
                    "{name} tau samples must be {batch_len} rows of {width}"
                )));
            }
            if rows.iter().flatten().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::invalid(format!("{name} taus must lie in [0, 1]")));
            }
            Ok(())
        };
        check("online", &self.online, cfg.n_online)?;
        check("target", &self.target, cfg.n_target)?;
        check("policy", &self.policy, cfg.k_policy)
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: TensorMap,
}

fn check_batch(batch: &[Transition], state_dim: usize, action_count: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("loss requires a non-empty batch"));
    }
    for (i, t) in batch.iter().enumerate() {
        if t.state.len() != state_dim || t.next_state.len() != state_dim {
            return Err(Error::invalid(format!(
                "transition {i} state dims do not match network state dim {state_dim}"
            )));
        }
        if t.action >= action_count {
            return Err(Error::invalid(format!(
                "transition {i} action {} out of range for {action_count} actions",
                t.action
            )));
        }
    }
    Ok(())
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// -- graph construction -----------------------------------------------------

/// L_kappa(x)/kappa for elementwise non-negative x, built from relu nodes:
/// min(x, kappa)^2 / 2 + kappa * relu(x - kappa), all over kappa.
/// `kappa_neg` is an input filled with -kappa (its rows match x).
fn huber_branch(g: &mut Graph, x: NodeId, kappa: f64, kappa_neg: NodeId) -> NodeId {
    let shifted = g.add(x, kappa_neg);
    let excess = g.relu(shifted);
    let neg_excess = g.scalar_mul(excess, -1.0);
    let clipped = g.add(x, neg_excess);
    let quad = g.hadamard(clipped, clipped);
    let quad_half = g.scalar_mul(quad, 0.5);
    let lin = g.scalar_mul(excess, kappa);
    let sum = g.add(quad_half, lin);
    g.scalar_mul(sum, 1.0 / kappa)
}

/// Weighted Huber quantile matrix: w_plus .* L(relu(delta)) +
/// w_minus .* L(relu(-delta)); exactly one branch is active per element.
fn weighted_quantile_loss(
    g: &mut Graph,
    delta: NodeId,
    w_plus: NodeId,
    w_minus: NodeId,
    kappa: f64,
    kappa_neg: Option<NodeId>,
) -> NodeId {
    let pos = g.relu(delta);
    let negated = g.scalar_mul(delta, -1.0);
    let neg = g.relu(negated);
    let (l_pos, l_neg) = if kappa == 0.0 {
        (pos, neg)
    } else {
        let kn = kappa_neg.expect("kappa_neg input required for kappa > 0");
        (huber_branch(g, pos, kappa, kn), huber_branch(g, neg, kappa, kn))
    };
    let wp = g.hadamard(w_plus, l_pos);
    let wn = g.hadamard(w_minus, l_neg);
    g.add(wp, wn)
}

/// IQN loss graph for a given architecture and config. Inputs: `state` and
/// `tau_input` (rows (b, i), b-major), `action` ([B*N]), `target`,
/// `w_plus`, `w_minus` ([B*N x N']), and `kappa_neg` when kappa > 0.
/// Output `loss` is the batch-mean Eq.-style objective.
pub fn iqn_loss_graph(spec: &ArchitectureSpec, cfg: &LossConfig) -> Graph {
    let mut g = Graph::new();
    let z = build_iqn_value(&mut g, spec);
    let action = g.input("action");
    let z_sel = g.select(z, action); // [B*N x 1]
    let ones = g.constant(Tensor::filled(vec![1, cfg.n_target], 1.0));
    let z_rep = g.matmul(z_sel, ones); // [B*N x N']
    let z_neg = g.scalar_mul(z_rep, -1.0);
    let target = g.input("target");
    let delta = g.add(target, z_neg);
    let w_plus = g.input("w_plus");
    let w_minus = g.input("w_minus");
    let kappa_neg = (cfg.kappa > 0.0).then(|| g.input("kappa_neg"));
    let weighted = weighted_quantile_loss(&mut g, delta, w_plus, w_minus, cfg.kappa, kappa_neg);
    // mean over B*N*N' entries times N restores sum_i (1/N') sum_j, averaged
    // over the batch; normalize_by_n divides the outer sum by N as well.
    let mean = g.reduce_mean(weighted);
    let scale = if cfg.normalize_by_n { 1.0 } else { cfg.n_online as f64 };
    let loss = g.scalar_mul(mean, scale);
    g.mark_output("loss", loss);
    g
}

/// Greedy next actions under the policy measure, evaluated on the target
/// network: argmax_a (1/K) sum_k Z_{tau~_k}(x', a), ties to the lowest index.
/// Terminal transitions get a placeholder 0 (their target ignores it).
fn iqn_next_actions(
    target: &IqnNetwork,
    batch: &[Transition],
    samples: &TauSamples,
) -> Result<Vec<usize>> {
    let spec = target.spec();
    let a_count = spec.action_count;
    let mut a_star = vec![0usize; batch.len()];
    let live: Vec<usize> = (0..batch.len()).filter(|&b| !batch[b].terminal).collect();
    if live.is_empty() || a_count == 1 {
        return Ok(a_star);
    }
    let k = samples.policy[0].len();
    let mut state_rows = Vec::with_capacity(live.len());
    let mut taus = Vec::with_capacity(live.len() * k);
    for &b in &live {
        state_rows.push(batch[b].next_state.clone());
        taus.extend_from_slice(&samples.policy[b]);
    }
    let states = Tensor::from_rows(&state_rows)?;
    let g = target.value_graph();
    let mut inputs = TensorMap::new();
    inputs.insert("state".into(), expand_state_rows(&states, k));
    inputs.insert("tau_input".into(), tau_input_tensor(spec, &taus)?);
    let eval = g.forward(&inputs, target.params())?;
    let z = eval.value(g.output_node("z").unwrap());
    for (li, &b) in live.iter().enumerate() {
        let mut acc = vec![0.0; a_count];
        for row in li * k..(li + 1) * k {
            for a in 0..a_count {
                acc[a] += z.at2(row, a);
            }
        }
        a_star[b] = argmax_lowest(&acc);
    }
    Ok(a_star)
}

/// Bootstrapped target rows t_{b,j} = r_b + gamma * Z_{tau'_j}(x'_b, a*_b),
/// or r_b alone for terminal transitions.
fn iqn_targets(
    target: &IqnNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
    samples: &TauSamples,
    a_star: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let spec = target.spec();
    let np = cfg.n_target;
    let mut rows = vec![Vec::new(); batch.len()];
    let live: Vec<usize> = (0..batch.len()).filter(|&b| !batch[b].terminal).collect();
    let mut live_z: Vec<Vec<f64>> = Vec::new();
    if !live.is_empty() {
        let mut state_rows = Vec::with_capacity(live.len());
        let mut taus = Vec::with_capacity(live.len() * np);
        for &b in &live {
            state_rows.push(batch[b].next_state.clone());
            taus.extend_from_slice(&samples.target[b]);
        }
        let states = Tensor::from_rows(&state_rows)?;
        let g = target.value_graph();
        let mut inputs = TensorMap::new();
        inputs.insert("state".into(), expand_state_rows(&states, np));
        inputs.insert("tau_input".into(), tau_input_tensor(spec, &taus)?);
        let eval = g.forward(&inputs, target.params())?;
        let z = eval.value(g.output_node("z").unwrap());
        for (li, &b) in live.iter().enumerate() {
            live_z.push(
                (0..np)
                    .map(|j| z.at2(li * np + j, a_star[b]))
                    .collect(),
            );
        }
    }
    let mut live_iter = live.iter().zip(live_z);
    let mut next_live = live_iter.next();
    for (b, t) in batch.iter().enumerate() {
        if t.terminal {
            rows[b] = vec![t.reward; np];
        } else {
            let (&lb, z) = next_live.take().expect("live row");
            debug_assert_eq!(lb, b);
            rows[b] = z.iter().map(|&v| t.reward + cfg.gamma * v).collect();
            next_live = live_iter.next();
        }
    }
    Ok(rows)
}

/// Graph plus input bindings for one IQN loss evaluation; exposed so the
/// gradient checker can drive the very same computation.
pub fn iqn_loss_parts(
    online: &IqnNetwork,
    target: &IqnNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
    samples: &TauSamples,
) -> Result<(Graph, TensorMap)> {
    cfg.validate()?;
    let spec = online.spec();
    if spec != target.spec() {
        return Err(Error::invalid("online and target architectures differ"));
    }
    check_batch(batch, spec.state_dim, spec.action_count)?;
    samples.validate(cfg, batch.len())?;

    let (b_len, n, np) = (batch.len(), cfg.n_online, cfg.n_target);
    let a_star = iqn_next_actions(target, batch, samples)?;
    let targets = iqn_targets(target, batch, cfg, samples, &a_star)?;

    let state_rows: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
    let states = Tensor::from_rows(&state_rows)?;
    let online_taus: Vec<f64> = samples.online.iter().flatten().copied().collect();

    let rows = b_len * n;
    let mut action = Vec::with_capacity(rows);
    let mut target_mat = Vec::with_capacity(rows * np);
    let mut w_plus = Vec::with_capacity(rows * np);
    let mut w_minus = Vec::with_capacity(rows * np);
    for (b, t) in batch.iter().enumerate() {
        for i in 0..n {
            action.push(t.action as f64);
            let tau = samples.online[b][i];
            for j in 0..np {
                target_mat.push(targets[b][j]);
                w_plus.push(tau);
                w_minus.push(1.0 - tau);
            }
        }
    }

    let graph = iqn_loss_graph(spec, cfg);
    let mut inputs = TensorMap::new();
    inputs.insert("state".into(), expand_state_rows(&states, n));
    inputs.insert("tau_input".into(), tau_input_tensor(spec, &online_taus)?);
    inputs.insert("action".into(), Tensor::vector(action));
    inputs.insert("target".into(), Tensor::matrix(rows, np, target_mat)?);
    inputs.insert("w_plus".into(), Tensor::matrix(rows, np, w_plus)?);
    inputs.insert("w_minus".into(), Tensor::matrix(rows, np, w_minus)?);
    if cfg.kappa > 0.0 {
        inputs.insert(
            "kappa_neg".into(),
            Tensor::filled(vec![rows, np], -cfg.kappa),
        );
    }
    Ok((graph, inputs))
}

/// The sampled IQN loss with pinned tau samples.
pub fn iqn_loss_with_samples(
    online: &IqnNetwork,
    target: &IqnNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
    samples: &TauSamples,
) -> Result<LossOutput> {
    let (graph, inputs) = iqn_loss_parts(online, target, batch, cfg, samples)?;
    let eval = graph.forward(&inputs, online.params())?;
    let loss = eval.value(graph.output_node("loss").unwrap()).item();
    let grads = graph.backward(&eval, "loss", &Tensor::scalar(1.0))?;
    Ok(LossOutput { loss, grads })
}

/// The sampled IQN loss: fresh iid tau_i, tau'_j ~ U([0,1]) per batch
/// element, greedy next action from K policy-measure draws on the target
/// network.
pub fn iqn_loss(
    online: &IqnNetwork,
    target: &IqnNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
    rng: &mut impl Rng,
) -> Result<LossOutput> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("loss requires a non-empty batch"));
    }
    let samples = TauSamples::draw(cfg, batch.len(), rng);
    iqn_loss_with_samples(online, target, batch, cfg, &samples)
}

/// QR loss graph. Inputs: `state` ([B x S]), `sel.{i}` index vectors
/// ([B]), `target`, `w_plus`, `w_minus` ([B x N*N]) and `kappa_neg` when
/// kappa > 0.
pub fn qr_loss_graph(spec: &ArchitectureSpec, n: usize, kappa: f64) -> Graph {
    let mut g = Graph::new();
    let out = build_psi_head_value(&mut g, spec); // [B x N*A]
    let mut theta = None;
    for i in 0..n {
        let idx = g.input(&format!("sel.{i}"));
        let col = g.select(out, idx); // [B x 1]
        theta = Some(match theta {
            None => col,
            Some(acc) => g.concat(acc, col, 1),
        });
    }
    let theta = theta.expect("n >= 1"); // [B x N]
    // row-repeat each theta_i across the j axis: M[i, i*N + j] = 1
    let mut m = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n * n + i * n + j] = 1.0;
        }
    }
    let expander = g.constant(Tensor::matrix(n, n * n, m).expect("expander shape"));
    let repeated = g.matmul(theta, expander); // [B x N*N]
    let neg = g.scalar_mul(repeated, -1.0);
    let target = g.input("target");
    let delta = g.add(target, neg);
    let w_plus = g.input("w_plus");
    let w_minus = g.input("w_minus");
    let kappa_neg = (kappa > 0.0).then(|| g.input("kappa_neg"));
    let weighted = weighted_quantile_loss(&mut g, delta, w_plus, w_minus, kappa, kappa_neg);
    let mean = g.reduce_mean(weighted); // sum / (B*N*N)
    let loss = g.scalar_mul(mean, n as f64); // -> (1/B) sum_b (1/N) sum_ij
    g.mark_output("loss", loss);
    g
}

/// Fixed-midpoint quantile regression loss on pairwise TD errors
/// delta_ij = r + gamma * theta_j(x', a*) - theta_i(x, a), with a* the
/// risk-neutral greedy action on the target network.
pub fn qr_loss(
    online: &QrNetwork,
    target: &QrNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let spec = online.spec();
    let n = online.n_quantiles();
    if spec != target.spec() || n != target.n_quantiles() {
        return Err(Error::invalid("online and target networks differ"));
    }
    check_batch(batch, spec.state_dim, spec.action_count)?;
    let a_count = spec.action_count;
    let b_len = batch.len();

    // bootstrapped target rows
    let live: Vec<usize> = (0..b_len).filter(|&b| !batch[b].terminal).collect();
    let mut targets = vec![Vec::new(); b_len];
    if !live.is_empty() {
        let rows: Vec<Vec<f64>> = live.iter().map(|&b| batch[b].next_state.clone()).collect();
        let states = Tensor::from_rows(&rows)?;
        let g = target.value_graph();
        let mut inputs = TensorMap::new();
        inputs.insert("state".into(), states);
        let eval = g.forward(&inputs, target.params())?;
        let out = eval.value(g.output_node("theta").unwrap());
        for (li, &b) in live.iter().enumerate() {
            let mut mean = vec![0.0; a_count];
            for i in 0..n {
                for a in 0..a_count {
                    mean[a] += out.at2(li, i * a_count + a);
                }
            }
            let a_star = argmax_lowest(&mean);
            targets[b] = (0..n)
                .map(|j| batch[b].reward + cfg.gamma * out.at2(li, j * a_count + a_star))
                .collect();
        }
    }
    for (b, t) in batch.iter().enumerate() {
        if t.terminal {
            targets[b] = vec![t.reward; n];
        }
    }

    let graph = qr_loss_graph(spec, n, cfg.kappa);
    let midpoints = qr_midpoints(n)?;
    let mut inputs = TensorMap::new();
    let state_rows: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
    inputs.insert("state".into(), Tensor::from_rows(&state_rows)?);
    for i in 0..n {
        let idx: Vec<f64> = batch
            .iter()
            .map(|t| (i * a_count + t.action) as f64)
            .collect();
        inputs.insert(format!("sel.{i}"), Tensor::vector(idx));
    }
    let mut target_mat = Vec::with_capacity(b_len * n * n);
    let mut w_plus = Vec::with_capacity(b_len * n * n);
    let mut w_minus = Vec::with_capacity(b_len * n * n);
    for targets_b in &targets {
        for &tau in &midpoints {
            for j in 0..n {
                target_mat.push(targets_b[j]);
                w_plus.push(tau);
                w_minus.push(1.0 - tau);
            }
        }
    }
    inputs.insert("target".into(), Tensor::matrix(b_len, n * n, target_mat)?);
    inputs.insert("w_plus".into(), Tensor::matrix(b_len, n * n, w_plus)?);
    inputs.insert("w_minus".into(), Tensor::matrix(b_len, n * n, w_minus)?);
    if cfg.kappa > 0.0 {
        inputs.insert(
            "kappa_neg".into(),
            Tensor::filled(vec![b_len, n * n], -cfg.kappa),
        );
    }

    let eval = graph.forward(&inputs, online.params())?;
    let loss = eval.value(graph.output_node("loss").unwrap()).item();
    let grads = graph.backward(&eval, "loss", &Tensor::scalar(1.0))?;
    Ok(LossOutput { loss, grads })
}

/// Scalar Huber TD loss mean_b L_kappa(delta_b)/kappa with
/// delta_b = r + gamma * max_a Q_target(x') - Q(x, a); kappa = 0 gives the
/// absolute error.
pub fn dqn_loss(
    online: &DqnNetwork,
    target: &DqnNetwork,
    batch: &[Transition],
    cfg: &LossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    let spec = online.spec();
    if spec != target.spec() {
        return Err(Error::invalid("online and target networks differ"));
    }
    check_batch(batch, spec.state_dim, spec.action_count)?;
    let b_len = batch.len();

    let live: Vec<usize> = (0..b_len).filter(|&b| !batch[b].terminal).collect();
    let mut targets = vec![0.0; b_len];
    if !live.is_empty() {
        let rows: Vec<Vec<f64>> = live.iter().map(|&b| batch[b].next_state.clone()).collect();
        let q = target.forward(&Tensor::from_rows(&rows)?)?;
        for (li, &b) in live.iter().enumerate() {
            let best = q
                .row(li)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            targets[b] = batch[b].reward + cfg.gamma * best;
        }
    }
    for (b, t) in batch.iter().enumerate() {
        if t.terminal {
            targets[b] = t.reward;
        }
    }

    let mut g = Graph::new();
    let q = build_psi_head_value(&mut g, spec);
    let action = g.input("action");
    let q_sel = g.select(q, action);
    let q_neg = g.scalar_mul(q_sel, -1.0);
    let target_in = g.input("target");
    let delta = g.add(target_in, q_neg);
    let w_plus = g.input("w_plus");
    let w_minus = g.input("w_minus");
    let kappa_neg = (cfg.kappa > 0.0).then(|| g.input("kappa_neg"));
    let weighted = weighted_quantile_loss(&mut g, delta, w_plus, w_minus, cfg.kappa, kappa_neg);
    let loss = g.reduce_mean(weighted);
    g.mark_output("loss", loss);

    let mut inputs = TensorMap::new();
    let state_rows: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
    inputs.insert("state".into(), Tensor::from_rows(&state_rows)?);
    inputs.insert(
        "action".into(),
        Tensor::vector(batch.iter().map(|t| t.action as f64).collect()),
    );
    inputs.insert("target".into(), Tensor::matrix(b_len, 1, targets)?);
    inputs.insert("w_plus".into(), Tensor::filled(vec![b_len, 1], 1.0));
    inputs.insert("w_minus".into(), Tensor::filled(vec![b_len, 1], 1.0));
    if cfg.kappa > 0.0 {
        inputs.insert("kappa_neg".into(), Tensor::filled(vec![b_len, 1], -cfg.kappa));
    }

    let eval = g.forward(&inputs, online.params())?;
    let loss_v = eval.value(g.output_node("loss").unwrap()).item();
    let grads = g.backward(&eval, "loss", &Tensor::scalar(1.0))?;
    Ok(LossOutput { loss: loss_v, grads })
}
