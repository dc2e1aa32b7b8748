//! Static compute graphs with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built once per network architecture and re-evaluated with
//! fresh bindings each step; only the leading (batch) dimension of the bound
//! inputs may vary between calls. Nodes are stored in insertion order, which
//! is a topological order by construction since an op can only reference
//! already-existing nodes.
//!
//! Primitives: matmul, add (with row-broadcast bias), hadamard product, relu,
//! sigmoid, cosine, scalar-multiply, concatenate, reduce-sum, reduce-mean and
//! element-select. ReLU uses subgradient 0 at the kink.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;
use crate::{Error, Result, TensorMap};

static GRAPH_IDS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Param(String),
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Cos(NodeId),
    ScalarMul(NodeId, f64),
    Concat(NodeId, NodeId, usize),
    ReduceSum(NodeId),
    ReduceMean(NodeId),
    Select { values: NodeId, indices: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Hadamard(..) => "hadamard",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Cos(_) => "cos",
            Op::ScalarMul(..) => "scalar_mul",
            Op::Concat(..) => "concat",
            Op::ReduceSum(_) => "reduce_sum",
            Op::ReduceMean(_) => "reduce_mean",
            Op::Select { .. } => "select",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    id: u64,
    nodes: Vec<Op>,
    inputs: Vec<(String, NodeId)>,
    params: Vec<(String, NodeId)>,
    outputs: Vec<(String, NodeId)>,
}

/// All node values from one forward pass. Required by [`Graph::backward`],
/// so a backward pass without a preceding forward pass cannot be expressed.
#[derive(Debug, Clone)]
pub struct Evaluation {
    graph_id: u64,
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            inputs: Vec::new(),
            params: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(op);
        id
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.push((name.to_string(), id));
        id
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        let id = self.push(Op::Param(name.to_string()));
        self.params.push((name.to_string(), id));
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Hadamard(a, b))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Cos(x))
    }

    pub fn scalar_mul(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::ScalarMul(x, c))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> NodeId {
        self.push(Op::Concat(a, b, axis))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::ReduceSum(x))
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::ReduceMean(x))
    }

    /// Per-row element selection: `values` is [m x n], `indices` holds m
    /// integral values in [0, n); the result is [m x 1].
    pub fn select(&mut self, values: NodeId, indices: NodeId) -> NodeId {
        self.push(Op::Select { values, indices })
    }

    pub fn mark_output(&mut self, name: &str, node: NodeId) {
        self.outputs.push((name.to_string(), node));
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(n, _)| n.as_str())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn output_node(&self, name: &str) -> Option<NodeId> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, id)| id)
    }

    fn err_shape(&self, node: usize, detail: String) -> Error {
        Error::ShapeMismatch {
            node,
            op: self.nodes[node].name(),
            detail,
        }
    }

    /// Evaluate every node in topological order. Deterministic for fixed
    /// bindings. Bound tensors must be finite.
    pub fn forward(&self, inputs: &TensorMap, params: &TensorMap) -> Result<Evaluation> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, op) in self.nodes.iter().enumerate() {
            let v = match op {
                Op::Input(name) => {
                    let t = inputs
                        .get(name)
                        .ok_or_else(|| Error::UnboundSlot { name: name.clone() })?;
                    t.check_finite(&format!("input `{name}`"))?;
                    t.clone()
                }
                Op::Param(name) => {
                    let t = params
                        .get(name)
                        .ok_or_else(|| Error::UnboundSlot { name: name.clone() })?;
                    t.check_finite(&format!("parameter `{name}`"))?;
                    t.clone()
                }
                Op::Constant(t) => t.clone(),
                Op::MatMul(a, b) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                        return Err(self.err_shape(
                            i,
                            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
                        ));
                    }
                    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                    let mut out = vec![0.0; m * n];
                    matmul_into(a.data(), b.data(), &mut out, m, k, n);
                    Tensor::matrix(m, n, out)?
                }
                Op::Add(a, b) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    if a.shape() == b.shape() {
                        let data = a
                            .data()
                            .iter()
                            .zip(b.data())
                            .map(|(x, y)| x + y)
                            .collect();
                        Tensor::new(a.shape().to_vec(), data)?
                    } else if a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0] {
                        // row-broadcast bias
                        let (m, n) = (a.shape()[0], a.shape()[1]);
                        let mut data = a.data().to_vec();
                        for r in 0..m {
                            for c in 0..n {
                                data[r * n + c] += b.data()[c];
                            }
                        }
                        Tensor::matrix(m, n, data)?
                    } else {
                        return Err(self.err_shape(
                            i,
                            format!("cannot add {:?} and {:?}", a.shape(), b.shape()),
                        ));
                    }
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    if a.shape() != b.shape() {
                        return Err(self.err_shape(
                            i,
                            format!("hadamard requires equal shapes, got {:?} and {:?}", a.shape(), b.shape()),
                        ));
                    }
                    let data = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(x, y)| x * y)
                        .collect();
                    Tensor::new(a.shape().to_vec(), data)?
                }
                Op::Relu(x) => values[x.0].map(|v| if v > 0.0 { v } else { 0.0 }),
                Op::Sigmoid(x) => values[x.0].map(|v| 1.0 / (1.0 + (-v).exp())),
                Op::Cos(x) => values[x.0].map(f64::cos),
                Op::ScalarMul(x, c) => values[x.0].map(|v| c * v),
                Op::Concat(a, b, axis) => {
                    let (a, b) = (&values[a.0], &values[b.0]);
                    self.concat_forward(i, a, b, *axis)?
                }
                Op::ReduceSum(x) => Tensor::scalar(values[x.0].data().iter().sum()),
                Op::ReduceMean(x) => {
                    let t = &values[x.0];
                    Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
                }
                Op::Select { values: v, indices } => {
                    let (v, idx) = (&values[v.0], &values[indices.0]);
                    if v.rank() != 2 || idx.rank() != 1 || idx.shape()[0] != v.shape()[0] {
                        return Err(self.err_shape(
                            i,
                            format!("select needs [m x n] values and [m] indices, got {:?} and {:?}", v.shape(), idx.shape()),
                        ));
                    }
                    let (m, n) = (v.shape()[0], v.shape()[1]);
                    let mut out = vec![0.0; m];
                    for r in 0..m {
                        let j = idx.data()[r];
                        if j.fract() != 0.0 || j < 0.0 || j as usize >= n {
                            return Err(self.err_shape(
                                i,
                                format!("select index {j} out of range for {n} columns at row {r}"),
                            ));
                        }
                        out[r] = v.at2(r, j as usize);
                    }
                    Tensor::matrix(m, 1, out)?
                }
            };
            values.push(v);
        }
        Ok(Evaluation {
            graph_id: self.id,
            values,
        })
    }

    fn concat_forward(&self, i: usize, a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || axis > 1 {
            return Err(self.err_shape(i, "concat requires rank-2 tensors and axis 0 or 1".into()));
        }
        let (ar, ac) = (a.shape()[0], a.shape()[1]);
        let (br, bc) = (b.shape()[0], b.shape()[1]);
        if axis == 0 {
            if ac != bc {
                return Err(self.err_shape(i, format!("concat axis 0 needs equal columns, got {ac} and {bc}")));
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::matrix(ar + br, ac, data)
        } else {
            if ar != br {
                return Err(self.err_shape(i, format!("concat axis 1 needs equal rows, got {ar} and {br}")));
            }
            let mut data = Vec::with_capacity((ac + bc) * ar);
            for r in 0..ar {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::matrix(ar, ac + bc, data)
        }
    }

    /// Reverse accumulation from `seed` at the named output. Returns the
    /// gradient for every parameter slot. `seed` must match the output shape.
    pub fn backward(&self, eval: &Evaluation, output: &str, seed: &Tensor) -> Result<TensorMap> {
        if eval.graph_id != self.id {
            return Err(Error::GraphMismatch);
        }
        let out = self
            .output_node(output)
            .ok_or_else(|| Error::UnboundSlot { name: output.to_string() })?;
        if seed.shape() != eval.values[out.0].shape() {
            return Err(Error::ShapeMismatch {
                node: out.0,
                op: "backward",
                detail: format!(
                    "seed shape {:?} does not match output shape {:?}",
                    seed.shape(),
                    eval.values[out.0].shape()
                ),
            });
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(seed.clone());

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i] {
                Op::Input(_) | Op::Param(_) | Op::Constant(_) => {
                    adj[i] = Some(g); // leaves keep their accumulated gradient
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&eval.values[a.0], &eval.values[b.0]);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    // dA = dC . B^T
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(g.data(), bv.data(), &mut da, m, n, k);
                    accumulate(&mut adj, *a, Tensor::matrix(m, k, da)?);
                    // dB = A^T . dC
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(av.data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut adj, *b, Tensor::matrix(k, n, db)?);
                }
                Op::Add(a, b) => {
                    let (av, bv) = (&eval.values[a.0], &eval.values[b.0]);
                    accumulate(&mut adj, *a, g.clone());
                    if av.shape() == bv.shape() {
                        accumulate(&mut adj, *b, g);
                    } else {
                        // bias broadcast: sum over rows
                        let (m, n) = (av.shape()[0], av.shape()[1]);
                        let mut db = vec![0.0; n];
                        for r in 0..m {
                            for c in 0..n {
                                db[c] += g.data()[r * n + c];
                            }
                        }
                        accumulate(&mut adj, *b, Tensor::vector(db));
                    }
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&eval.values[a.0], &eval.values[b.0]);
                    accumulate(&mut adj, *a, elementwise_mul(&g, bv));
                    accumulate(&mut adj, *b, elementwise_mul(&g, av));
                }
                Op::Relu(x) => {
                    let xv = &eval.values[x.0];
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Sigmoid(x) => {
                    let yv = &eval.values[i];
                    let data = g
                        .data()
                        .iter()
                        .zip(yv.data())
                        .map(|(&gi, &yi)| gi * yi * (1.0 - yi))
                        .collect();
                    accumulate(&mut adj, *x, Tensor::new(yv.shape().to_vec(), data)?);
                }
                Op::Cos(x) => {
                    let xv = &eval.values[x.0];
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gi, &xi)| -xi.sin() * gi)
                        .collect();
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::ScalarMul(x, c) => {
                    accumulate(&mut adj, *x, g.map(|v| c * v));
                }
                Op::Concat(a, b, axis) => {
                    let (av, bv) = (&eval.values[a.0], &eval.values[b.0]);
                    let (ar, ac) = (av.shape()[0], av.shape()[1]);
                    let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                    if *axis == 0 {
                        let split = ar * ac;
                        accumulate(&mut adj, *a, Tensor::matrix(ar, ac, g.data()[..split].to_vec())?);
                        accumulate(&mut adj, *b, Tensor::matrix(br, bc, g.data()[split..].to_vec())?);
                    } else {
                        let mut da = Vec::with_capacity(ar * ac);
                        let mut db = Vec::with_capacity(br * bc);
                        for r in 0..ar {
                            let row = &g.data()[r * (ac + bc)..(r + 1) * (ac + bc)];
                            da.extend_from_slice(&row[..ac]);
                            db.extend_from_slice(&row[ac..]);
                        }
                        accumulate(&mut adj, *a, Tensor::matrix(ar, ac, da)?);
                        accumulate(&mut adj, *b, Tensor::matrix(br, bc, db)?);
                    }
                }
                Op::ReduceSum(x) => {
                    let xv = &eval.values[x.0];
                    accumulate(&mut adj, *x, Tensor::filled(xv.shape().to_vec(), g.item()));
                }
                Op::ReduceMean(x) => {
                    let xv = &eval.values[x.0];
                    let v = g.item() / xv.numel() as f64;
                    accumulate(&mut adj, *x, Tensor::filled(xv.shape().to_vec(), v));
                }
                Op::Select { values: v, indices } => {
                    let (vv, idx) = (&eval.values[v.0], &eval.values[indices.0]);
                    let (m, n) = (vv.shape()[0], vv.shape()[1]);
                    let mut dv = vec![0.0; m * n];
                    for r in 0..m {
                        dv[r * n + idx.data()[r] as usize] = g.data()[r];
                    }
                    accumulate(&mut adj, *v, Tensor::matrix(m, n, dv)?);
                    // indices carry no gradient
                }
            }
        }

        let mut grads = TensorMap::new();
        for (name, id) in &self.params {
            let g = match adj[id.0].take() {
                Some(t) => t,
                None => {
                    // parameter does not influence the output; gradient is zero
                    let shape = eval.values[id.0].shape().to_vec();
                    Tensor::zeros(shape)
                }
            };
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    /// Activation sign pattern of every relu node, used by the gradient
    /// checker to detect finite-difference evaluations that straddle a kink.
    pub fn relu_pattern(&self, eval: &Evaluation) -> Vec<bool> {
        let mut pattern = Vec::new();
        for (i, op) in self.nodes.iter().enumerate() {
            if let Op::Relu(x) = op {
                let _ = i;
                pattern.extend(eval.values[x.0].data().iter().map(|&v| v > 0.0));
            }
        }
        pattern
    }

    /// True if any relu input sits exactly on the kink in this evaluation.
    pub fn has_kink_at_zero(&self, eval: &Evaluation) -> bool {
        self.nodes.iter().any(|op| {
            if let Op::Relu(x) = op {
                eval.values[x.0].data().iter().any(|&v| v == 0.0)
            } else {
                false
            }
        })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], node: NodeId, grad: Tensor) {
    match &mut adj[node.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes already checked")
}

/// C[m x n] += A[m x k] . B[k x n]
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

/// C[m x k] += A[m x n] . B[k x n]^T
fn matmul_nt_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += arow[j] * brow[j];
            }
            crow[p] += s;
        }
    }
}

/// C[k x n] += A[m x k]^T . B[m x n]
fn matmul_tn_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let crow = &mut c[p * n..(p + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}
