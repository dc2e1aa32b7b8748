//! IQN, QR and DQN function approximators.
//!
//! The IQN approximator is Z_tau(x, a) ~= f(m(psi(x), phi(tau)))_a: a state
//! encoder psi, a sample-point embedding phi, a merge function m, and a head
//! f. All appendix variants are supported: cosine-basis or learned-MLP
//! embeddings, ReLU or sigmoid embedding nonlinearity, and hadamard /
//! concatenate / residual merges. The QR head outputs N fixed-quantile values
//! per action; the DQN head a single scalar per action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::distortion::DistortionMeasure;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedding {
    /// Learned linear map over cos(pi * i * tau), i = 0..n-1. The i = 0
    /// feature is identically one, subsuming a basis-side bias.
    CosineBasis { n: usize },
    /// One-hidden-layer MLP on the scalar tau, hidden width n.
    LearnedMlp { n: usize },
}

impl Embedding {
    pub fn dim(&self) -> usize {
        match *self {
            Embedding::CosineBasis { n } | Embedding::LearnedMlp { n } => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    Hadamard,
    Concatenate,
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub state_dim: usize,
    pub action_count: usize,
    pub psi_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embedding: Embedding,
    pub nonlinearity: Nonlinearity,
    pub merge: MergeKind,
}

impl ArchitectureSpec {
    /// Preferred configuration: cosine basis n = 64, ReLU, hadamard merge,
    /// one hidden psi layer of width 128, feature dim 128.
    pub fn new(state_dim: usize, action_count: usize) -> Self {
        ArchitectureSpec {
            state_dim,
            action_count,
            psi_hidden: vec![128],
            feature_dim: 128,
            embedding: Embedding::CosineBasis { n: 64 },
            nonlinearity: Nonlinearity::Relu,
            merge: MergeKind::Hadamard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_count == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("architecture dimensions must be positive"));
        }
        if self.embedding.dim() == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if self.psi_hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("psi hidden widths must be positive"));
        }
        Ok(())
    }

    fn merge_dim(&self) -> usize {
        match self.merge {
            MergeKind::Hadamard | MergeKind::Residual => self.feature_dim,
            MergeKind::Concatenate => 2 * self.feature_dim,
        }
    }

    fn psi_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.state_dim];
        dims.extend(&self.psi_hidden);
        dims.push(self.feature_dim);
        dims
    }
}

/// (name, shape, fan_in) for every parameter of a network.
fn param_layout(spec: &ArchitectureSpec, head_out: usize, with_phi: bool) -> Vec<(String, Vec<usize>, usize)> {
    let mut layout = Vec::new();
    let dims = spec.psi_dims();
    for (i, w) in dims.windows(2).enumerate() {
        layout.push((format!("psi.{i}.w"), vec![w[0], w[1]], w[0]));
        layout.push((format!("psi.{i}.b"), vec![w[1]], w[0]));
    }
    if with_phi {
        let d = spec.feature_dim;
        match spec.embedding {
            Embedding::CosineBasis { n } => {
                layout.push(("phi.w".into(), vec![n, d], n));
                layout.push(("phi.b".into(), vec![d], n));
            }
            Embedding::LearnedMlp { n } => {
                layout.push(("phi.0.w".into(), vec![1, n], 1));
                layout.push(("phi.0.b".into(), vec![n], 1));
                layout.push(("phi.1.w".into(), vec![n, d], n));
                layout.push(("phi.1.b".into(), vec![d], n));
            }
        }
    }
    let merge_dim = if with_phi { spec.merge_dim() } else { spec.feature_dim };
    let hidden = spec.feature_dim;
    layout.push(("head.0.w".into(), vec![merge_dim, hidden], merge_dim));
    layout.push(("head.0.b".into(), vec![hidden], merge_dim));
    layout.push(("head.1.w".into(), vec![hidden, head_out], hidden));
    layout.push(("head.1.b".into(), vec![head_out], hidden));
    layout
}

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fully determined by
/// the seed.
fn init_params(layout: &[(String, Vec<usize>, usize)], seed: u64) -> TensorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = TensorMap::new();
    for (name, shape, fan_in) in layout {
        let bound = 1.0 / (*fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        params.insert(name.clone(), Tensor::new(shape.clone(), data).expect("layout shape"));
    }
    params
}

fn validate_params(layout: &[(String, Vec<usize>, usize)], params: &TensorMap) -> Result<()> {
    for (name, shape, _) in layout {
        match params.get(name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            None => return Err(Error::UnboundSlot { name: name.clone() }),
        }
    }
    Ok(())
}

/// Append psi (MLP with ReLU after every layer) to `g`, returning the
/// feature node.
fn build_psi(g: &mut Graph, spec: &ArchitectureSpec, state: NodeId) -> NodeId {
    let dims = spec.psi_dims();
    let mut h = state;
    for i in 0..dims.len() - 1 {
        let w = g.param(&format!("psi.{i}.w"));
        let b = g.param(&format!("psi.{i}.b"));
        let lin = g.matmul(h, w);
        let biased = g.add(lin, b);
        h = g.relu(biased);
    }
    h
}

fn build_phi(g: &mut Graph, spec: &ArchitectureSpec, tau_input: NodeId) -> NodeId {
    let pre = match spec.embedding {
        Embedding::CosineBasis { .. } => {
            let feats = g.cos(tau_input);
            let w = g.param("phi.w");
            let b = g.param("phi.b");
            let lin = g.matmul(feats, w);
            g.add(lin, b)
        }
        Embedding::LearnedMlp { .. } => {
            let w0 = g.param("phi.0.w");
            let b0 = g.param("phi.0.b");
            let lin0 = g.matmul(tau_input, w0);
            let biased0 = g.add(lin0, b0);
            let h = g.relu(biased0);
            let w1 = g.param("phi.1.w");
            let b1 = g.param("phi.1.b");
            let lin1 = g.matmul(h, w1);
            g.add(lin1, b1)
        }
    };
    match spec.nonlinearity {
        Nonlinearity::Relu => g.relu(pre),
        Nonlinearity::Sigmoid => g.sigmoid(pre),
    }
}

fn build_head(g: &mut Graph, merged: NodeId) -> NodeId {
    let w0 = g.param("head.0.w");
    let b0 = g.param("head.0.b");
    let lin0 = g.matmul(merged, w0);
    let biased0 = g.add(lin0, b0);
    let h = g.relu(biased0);
    let w1 = g.param("head.1.w");
    let b1 = g.param("head.1.b");
    let lin1 = g.matmul(h, w1);
    g.add(lin1, b1)
}

/// Full IQN value subgraph. Inputs `state` ([rows x state_dim]) and
/// `tau_input` (see [`tau_input_tensor`]); returns the node holding
/// per-row action values [rows x action_count].
pub(crate) fn build_iqn_value(g: &mut Graph, spec: &ArchitectureSpec) -> NodeId {
    let state = g.input("state");
    let tau_input = g.input("tau_input");
    let psi = build_psi(g, spec, state);
    let phi = build_phi(g, spec, tau_input);
    let merged = match spec.merge {
        MergeKind::Hadamard => g.hadamard(psi, phi),
        MergeKind::Residual => {
            let prod = g.hadamard(psi, phi);
            g.add(psi, prod)
        }
        MergeKind::Concatenate => g.concat(psi, phi, 1),
    };
    build_head(g, merged)
}

/// psi+head subgraph for the QR and DQN baselines; the output width comes
/// from the bound head parameters.
pub(crate) fn build_psi_head_value(g: &mut Graph, spec: &ArchitectureSpec) -> NodeId {
    let state = g.input("state");
    let psi = build_psi(g, spec, state);
    build_head(g, psi)
}

/// The tensor bound to the `tau_input` slot for a row vector of taus:
/// cosine basis arguments pi*i*tau ([rows x n]) or the raw tau column
/// ([rows x 1]) for the learned-MLP embedding.
pub(crate) fn tau_input_tensor(spec: &ArchitectureSpec, taus: &[f64]) -> Result<Tensor> {
    for &t in taus {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {t}")));
        }
    }
    match spec.embedding {
        Embedding::CosineBasis { n } => {
            let mut data = Vec::with_capacity(taus.len() * n);
            for &t in taus {
                for i in 0..n {
                    data.push(PI * i as f64 * t);
                }
            }
            Tensor::matrix(taus.len(), n, data)
        }
        Embedding::LearnedMlp { .. } => Tensor::matrix(taus.len(), 1, taus.to_vec()),
    }
}

/// Input bindings for one value-graph evaluation with one tau per state row.
pub fn iqn_row_inputs(spec: &ArchitectureSpec, states: &Tensor, taus: &[f64]) -> Result<TensorMap> {
    if states.rank() != 2 || states.shape()[1] != spec.state_dim {
        return Err(Error::invalid(format!(
            "states must be [rows x {}], got {:?}",
            spec.state_dim,
            states.shape()
        )));
    }
    if taus.len() != states.shape()[0] {
        return Err(Error::invalid("need exactly one tau per state row"));
    }
    let mut inputs = TensorMap::new();
    inputs.insert("state".into(), states.clone());
    inputs.insert("tau_input".into(), tau_input_tensor(spec, taus)?);
    Ok(inputs)
}

/// Raw cosine features cos(pi * i * tau), i = 0..n-1, before the learned
/// linear map.
pub fn cosine_features(taus: &[f64], n: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::invalid("cosine basis needs n >= 1"));
    }
    let mut data = Vec::with_capacity(taus.len() * n);
    for &t in taus {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {t}")));
        }
        for i in 0..n {
            data.push((PI * i as f64 * t).cos());
        }
    }
    Tensor::matrix(taus.len(), n, data)
}

/// Repeat each state row `times` times: row (b, t) of the result is row b
/// of `states`.
pub(crate) fn expand_state_rows(states: &Tensor, times: usize) -> Tensor {
    let (b, s) = (states.shape()[0], states.shape()[1]);
    let mut data = Vec::with_capacity(b * times * s);
    for r in 0..b {
        for _ in 0..times {
            data.extend_from_slice(states.row(r));
        }
    }
    Tensor::matrix(b * times, s, data).expect("expand shape")
}

/// Anything that can evaluate per-action quantile values at given taus for
/// one state. Implemented by [`IqnNetwork`]; tests substitute table-lookup
/// doubles.
pub trait StateActionQuantiles {
    fn action_count(&self) -> usize;
    /// Returns `taus.len()` rows of `action_count` values.
    fn quantiles(&self, state: &[f64], taus: &[f64]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct IqnNetwork {
    spec: ArchitectureSpec,
    params: TensorMap,
}

impl IqnNetwork {
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = param_layout(&spec, spec.action_count, true);
        Ok(IqnNetwork {
            params: init_params(&layout, seed),
            spec,
        })
    }

    pub fn from_params(spec: ArchitectureSpec, params: TensorMap) -> Result<Self> {
        spec.validate()?;
        validate_params(&param_layout(&spec, spec.action_count, true), &params)?;
        Ok(IqnNetwork { spec, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        &mut self.params
    }

    pub fn value_graph(&self) -> Graph {
        let mut g = Graph::new();
        let z = build_iqn_value(&mut g, &self.spec);
        g.mark_output("z", z);
        g
    }

    /// Quantile-crossing diagnostic: the number of adjacent decreasing pairs
    /// along a sorted tau grid, summed over actions.
    pub fn quantile_crossings(&self, state: &[f64], tau_grid: &[f64]) -> Result<usize> {
        let z = iqn_forward(self, &Tensor::matrix(1, state.len(), state.to_vec())?, tau_grid)?;
        let a = self.spec.action_count;
        let mut crossings = 0;
        for col in 0..a {
            for t in 1..tau_grid.len() {
                if z.data()[t * a + col] < z.data()[(t - 1) * a + col] {
                    crossings += 1;
                }
            }
        }
        Ok(crossings)
    }
}

impl StateActionQuantiles for IqnNetwork {
    fn action_count(&self) -> usize {
        self.spec.action_count
    }

    fn quantiles(&self, state: &[f64], taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let states = Tensor::matrix(1, state.len(), state.to_vec())?;
        let z = iqn_forward(self, &states, taus)?;
        let a = self.spec.action_count;
        Ok((0..taus.len())
            .map(|t| z.data()[t * a..(t + 1) * a].to_vec())
            .collect())
    }
}

/// Evaluate the sample embedding phi on a tau vector, one row per tau.
pub fn embed_tau(network: &IqnNetwork, taus: &[f64]) -> Result<Tensor> {
    let mut g = Graph::new();
    let tau_input = g.input("tau_input");
    let phi = build_phi(&mut g, &network.spec, tau_input);
    g.mark_output("phi", phi);
    let mut inputs = TensorMap::new();
    inputs.insert("tau_input".into(), tau_input_tensor(&network.spec, taus)?);
    let eval = g.forward(&inputs, &network.params)?;
    Ok(eval.value(g.output_node("phi").unwrap()).clone())
}

/// Per-sample-point action values: [batch x num_taus x action_count].
pub fn iqn_forward(network: &IqnNetwork, states: &Tensor, taus: &[f64]) -> Result<Tensor> {
    let spec = &network.spec;
    if states.rank() != 2 || states.shape()[1] != spec.state_dim {
        return Err(Error::invalid(format!(
            "states must be [batch x {}], got {:?}",
            spec.state_dim,
            states.shape()
        )));
    }
    if taus.is_empty() {
        return Err(Error::invalid("iqn_forward needs at least one tau"));
    }
    let b = states.shape()[0];
    let t = taus.len();
    let tau_rows: Vec<f64> = std::iter::repeat(taus)
        .take(b)
        .flatten()
        .copied()
        .collect();
    let g = network.value_graph();
    let mut inputs = TensorMap::new();
    inputs.insert("state".into(), expand_state_rows(states, t));
    inputs.insert("tau_input".into(), tau_input_tensor(spec, &tau_rows)?);
    let eval = g.forward(&inputs, &network.params)?;
    let z = eval.value(g.output_node("z").unwrap());
    Tensor::new(vec![b, t, spec.action_count], z.data().to_vec())
}

/// K-sample approximation of the distorted expectation Q_beta per action:
/// the sample mean of Z over K draws of tau through the measure.
pub fn q_beta_estimate<Z: StateActionQuantiles>(
    network: &Z,
    state: &[f64],
    measure: &DistortionMeasure,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("q_beta_estimate needs k >= 1"));
    }
    let taus: Vec<f64> = (0..k).map(|_| measure.sample_tau(rng)).collect();
    mean_over_rows(&network.quantiles(state, &taus)?, network.action_count())
}

/// Deterministic midpoint-quadrature counterpart of [`q_beta_estimate`] for
/// pointwise measures; used by greedy evaluation so that converged policies
/// act reproducibly.
pub fn q_beta_quadrature<Z: StateActionQuantiles>(
    network: &Z,
    state: &[f64],
    measure: &DistortionMeasure,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("q_beta_quadrature needs k >= 1"));
    }
    let taus: Vec<f64> = (0..k)
        .map(|i| measure.apply((2 * i + 1) as f64 / (2 * k) as f64))
        .collect::<Result<_>>()?;
    mean_over_rows(&network.quantiles(state, &taus)?, network.action_count())
}

fn mean_over_rows(rows: &[Vec<f64>], actions: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; actions];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let k = rows.len() as f64;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

#[derive(Debug, Clone)]
pub struct QrNetwork {
    spec: ArchitectureSpec,
    n_quantiles: usize,
    params: TensorMap,
}

impl QrNetwork {
    pub fn init(spec: ArchitectureSpec, n_quantiles: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_quantiles == 0 {
            return Err(Error::invalid("quantile count must be at least 1"));
        }
        let layout = param_layout(&spec, n_quantiles * spec.action_count, false);
        Ok(QrNetwork {
            params: init_params(&layout, seed),
            spec,
            n_quantiles,
        })
    }

    pub fn from_params(spec: ArchitectureSpec, n_quantiles: usize, params: TensorMap) -> Result<Self> {
        spec.validate()?;
        validate_params(
            &param_layout(&spec, n_quantiles * spec.action_count, false),
            &params,
        )?;
        Ok(QrNetwork { spec, n_quantiles, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        &mut self.params
    }

    pub fn value_graph(&self) -> Graph {
        let mut g = Graph::new();
        let out = build_psi_head_value(&mut g, &self.spec);
        g.mark_output("theta", out);
        g
    }

    /// Risk-neutral action values: the mean over the N quantile columns.
    pub fn action_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let z = qr_forward(self, &Tensor::matrix(1, state.len(), state.to_vec())?)?;
        let (n, a) = (self.n_quantiles, self.spec.action_count);
        let mut acc = vec![0.0; a];
        for i in 0..n {
            for col in 0..a {
                acc[col] += z.data()[i * a + col];
            }
        }
        Ok(acc.into_iter().map(|v| v / n as f64).collect())
    }
}

/// Fixed-quantile forward pass: [batch x N x action_count], column i holding
/// theta_i at midpoint tau_hat_i. Head output is laid out quantile-major:
/// flat column i * action_count + a.
pub fn qr_forward(network: &QrNetwork, states: &Tensor) -> Result<Tensor> {
    let spec = &network.spec;
    if states.rank() != 2 || states.shape()[1] != spec.state_dim {
        return Err(Error::invalid(format!(
            "states must be [batch x {}], got {:?}",
            spec.state_dim,
            states.shape()
        )));
    }
    let g = network.value_graph();
    let mut inputs = TensorMap::new();
    inputs.insert("state".into(), states.clone());
    let eval = g.forward(&inputs, &network.params)?;
    let out = eval.value(g.output_node("theta").unwrap());
    Tensor::new(
        vec![states.shape()[0], network.n_quantiles, spec.action_count],
        out.data().to_vec(),
    )
}

#[derive(Debug, Clone)]
pub struct DqnNetwork {
    spec: ArchitectureSpec,
    params: TensorMap,
}

impl DqnNetwork {
    pub fn init(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = param_layout(&spec, spec.action_count, false);
        Ok(DqnNetwork {
            params: init_params(&layout, seed),
            spec,
        })
    }

    pub fn from_params(spec: ArchitectureSpec, params: TensorMap) -> Result<Self> {
        spec.validate()?;
        validate_params(&param_layout(&spec, spec.action_count, false), &params)?;
        Ok(DqnNetwork { spec, params })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        &mut self.params
    }

    pub fn value_graph(&self) -> Graph {
        let mut g = Graph::new();
        let out = build_psi_head_value(&mut g, &self.spec);
        g.mark_output("q", out);
        g
    }

    pub fn forward(&self, states: &Tensor) -> Result<Tensor> {
        if states.rank() != 2 || states.shape()[1] != self.spec.state_dim {
            return Err(Error::invalid(format!(
                "states must be [batch x {}], got {:?}",
                self.spec.state_dim,
                states.shape()
            )));
        }
        let g = self.value_graph();
        let mut inputs = TensorMap::new();
        inputs.insert("state".into(), states.clone());
        let eval = g.forward(&inputs, &self.params)?;
        Ok(eval.value(g.output_node("q").unwrap()).clone())
    }

    pub fn action_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let q = self.forward(&Tensor::matrix(1, state.len(), state.to_vec())?)?;
        Ok(q.data().to_vec())
    }
}
