//! Define-then-run computation graph with reverse-mode gradients.
//!
//! Nodes are appended in construction order, which is always a valid
//! topological order: a node can only reference nodes that already exist.
//! `forward` evaluates every node against a set of named bindings and
//! `backward` walks the nodes in reverse, accumulating adjoints.

use std::collections::{BTreeMap, HashMap};

use crate::tensor::{sigmoid, Tensor};
use crate::GraphError;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Named parameter gradients, ordered by name.
pub type Gradients = BTreeMap<String, Tensor>;

/// A differentiable operation implemented outside the built-in set.
///
/// `backward` returns one gradient per input, each shaped like that input.
/// Ops that keep non-differentiable state (for example routing weights
/// settled by an inner iteration) should honour [`CustomOp::set_frozen`]:
/// while frozen, `forward` reuses the state from the last unfrozen call.
pub trait CustomOp: Send {
    fn name(&self) -> &'static str;
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, GraphError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
    fn set_frozen(&mut self, _frozen: bool) {}
}

enum Op {
    Input(String),
    Param(String),
    Constant(Tensor),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>, usize),
    Reshape(NodeId, Vec<usize>),
    Select(NodeId, usize),
    Softmax(NodeId),
    Norm(NodeId),
    Squash(NodeId),
    Custom(Box<dyn CustomOp>, Vec<NodeId>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::ClampMin(..) => "clamp_min",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Select(..) => "select",
            Op::Softmax(_) => "softmax",
            Op::Norm(_) => "norm",
            Op::Squash(_) => "squash",
            Op::Custom(op, _) => op.name(),
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Constant(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a, _)
            | Op::Select(a, _)
            | Op::Softmax(a)
            | Op::Norm(a)
            | Op::Squash(a) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
            Op::Custom(_, inputs) => inputs.clone(),
        }
    }
}

struct Node {
    op: Op,
    needs_grad: bool,
}

/// Named tensors supplied to [`Graph::forward`] for inputs and parameters.
#[derive(Default, Clone)]
pub struct Bindings<'a> {
    map: HashMap<&'a str, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: &'a str, value: &'a Tensor) -> &mut Self {
        self.map.insert(name, value);
        self
    }

    pub fn with(mut self, name: &'a str, value: &'a Tensor) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.map.get(name).copied()
    }
}

impl<'a, S: AsRef<str>> FromIterator<(&'a S, &'a Tensor)> for Bindings<'a> {
    fn from_iter<I: IntoIterator<Item = (&'a S, &'a Tensor)>>(iter: I) -> Self {
        Self {
            map: iter.into_iter().map(|(k, v)| (k.as_ref(), v)).collect(),
        }
    }
}

/// A computation graph. Build it once, then run `forward`/`backward` as many
/// times as needed with different bindings.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    evaluated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { op, needs_grad });
        self.values.push(None);
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A non-differentiable named input.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_owned()))
    }

    /// A named leaf whose gradient `backward` reports.
    pub fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Param(name.to_owned()))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    /// Matrix-matrix (`[m,k]·[k,n]`) or matrix-vector (`[m,k]·[k]`) product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    /// Adds a scalar to every entry.
    pub fn offset(&mut self, a: NodeId, shift: f64) -> NodeId {
        self.push(Op::Offset(a, shift))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    /// `max(a, floor)` elementwise; the gradient is zero where clamped.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.push(Op::ClampMin(a, floor))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    /// Concatenation along `axis`. All parts agree on every other axis.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::Concat(parts.to_vec(), axis))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    /// Slice `index` along the leading axis, dropping that axis.
    pub fn select(&mut self, a: NodeId, index: usize) -> NodeId {
        self.push(Op::Select(a, index))
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }

    /// Euclidean norm of all entries, as a scalar.
    pub fn norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Norm(a))
    }

    /// Capsule squash over the last axis: `‖s‖²/(1+‖s‖²) · s/‖s‖`, zero at zero.
    pub fn squash(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Squash(a))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[NodeId]) -> NodeId {
        self.push(Op::Custom(op, inputs.to_vec()))
    }

    /// Switches every custom op between live and frozen auxiliary state.
    pub fn set_frozen(&mut self, frozen: bool) {
        for node in &mut self.nodes {
            if let Op::Custom(op, _) = &mut node.op {
                op.set_frozen(frozen);
            }
        }
    }

    /// Names of all parameter leaves, in construction order.
    pub fn param_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Param(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Value computed for `id` by the last `forward`.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        if !self.evaluated {
            return None;
        }
        self.values.get(id.0).and_then(Option::as_ref)
    }

    /// Runs `forward` and returns a copy of the value at `output`.
    pub fn eval(&mut self, bindings: &Bindings<'_>, output: NodeId) -> Result<Tensor, GraphError> {
        self.forward(bindings)?;
        Ok(self.values[output.0].clone().expect("evaluated"))
    }

    /// Evaluates every node. Inputs and parameters are read from `bindings`.
    pub fn forward(&mut self, bindings: &Bindings<'_>) -> Result<(), GraphError> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let value = self.eval_node(i, bindings)?;
            if !value.is_finite() {
                return Err(GraphError::NonFiniteOutput(self.nodes[i].op.name()));
            }
            self.values[i] = Some(value);
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("parent evaluated first")
    }

    fn eval_node(&mut self, i: usize, bindings: &Bindings<'_>) -> Result<Tensor, GraphError> {
        let name = self.nodes[i].op.name();
        let shape_err = |detail: String| GraphError::Shape { op: name, detail };
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<(), GraphError> {
            if a.shape() == b.shape() {
                Ok(())
            } else {
                Err(GraphError::Shape {
                    op: name,
                    detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                })
            }
        };
        if let Op::Custom(op, inputs) = &mut self.nodes[i].op {
            let vals: Vec<&Tensor> = inputs
                .iter()
                .map(|p| self.values[p.0].as_ref().expect("parent evaluated first"))
                .collect();
            return op.forward(&vals);
        }
        let out = match &self.nodes[i].op {
            Op::Input(n) | Op::Param(n) => bindings
                .get(n)
                .cloned()
                .ok_or_else(|| GraphError::Unbound(n.clone()))?,
            Op::Constant(t) => t.clone(),
            Op::MatMul(a, b) => self.val(*a).matmul(self.val(*b))?,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                same_shape(x, y)?;
                let f: fn(f64, f64) -> f64 = match &self.nodes[i].op {
                    Op::Add(..) => |p, q| p + q,
                    Op::Sub(..) => |p, q| p - q,
                    _ => |p, q| p * q,
                };
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &q)| f(p, q))
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.val(*a).map(|v| v * k)
            }
            Op::Offset(a, k) => {
                let k = *k;
                self.val(*a).map(|v| v + k)
            }
            Op::Sigmoid(a) => self.val(*a).map(sigmoid),
            Op::Tanh(a) => self.val(*a).map(f64::tanh),
            Op::Exp(a) => self.val(*a).map(f64::exp),
            Op::Log(a) => {
                let x = self.val(*a);
                if x.data().iter().any(|&v| v <= 0.0) {
                    return Err(shape_err("log of a non-positive entry".into()));
                }
                x.map(f64::ln)
            }
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                self.val(*a).map(|v| v.max(lo))
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).sum()),
            Op::Mean(a) => {
                let x = self.val(*a);
                if x.is_empty() {
                    return Err(shape_err("mean of an empty tensor".into()));
                }
                Tensor::scalar(x.sum() / x.len() as f64)
            }
            Op::Concat(parts, axis) => {
                let vals: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
                concat(&vals, *axis).map_err(shape_err)?
            }
            Op::Reshape(a, shape) => self.val(*a).clone().reshape(shape.clone()).map_err(|_| {
                shape_err(format!(
                    "{:?} cannot become {:?}",
                    self.val(*a).shape(),
                    shape
                ))
            })?,
            Op::Select(a, index) => {
                let x = self.val(*a);
                if x.rank() == 0 || *index >= x.shape()[0] {
                    return Err(shape_err(format!("index {index} into {:?}", x.shape())));
                }
                let inner: usize = x.shape()[1..].iter().product();
                Tensor::from_parts(
                    x.shape()[1..].to_vec(),
                    x.data()[index * inner..(index + 1) * inner].to_vec(),
                )
            }
            Op::Softmax(a) => {
                let x = self.val(*a);
                let width = last_dim(x).map_err(shape_err)?;
                let mut data = Vec::with_capacity(x.len());
                for row in x.data().chunks(width) {
                    data.extend(crate::tensor::softmax(row));
                }
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            Op::Norm(a) => Tensor::scalar(self.val(*a).norm()),
            Op::Squash(a) => {
                let x = self.val(*a);
                let width = last_dim(x).map_err(shape_err)?;
                let mut data = Vec::with_capacity(x.len());
                for row in x.data().chunks(width) {
                    data.extend(squash_slice(row));
                }
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            Op::Custom(..) => unreachable!(),
        };
        Ok(out)
    }

    /// Reverse pass from `output`, seeded with `adjoint` (same shape as the
    /// output). Returns the gradient of every parameter reachable from it.
    pub fn backward(&self, output: NodeId, adjoint: &Tensor) -> Result<Gradients, GraphError> {
        let mut grads = Gradients::new();
        self.backward_into(output, adjoint, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`] but adds into an existing gradient map.
    pub fn backward_into(
        &self,
        output: NodeId,
        adjoint: &Tensor,
        grads: &mut Gradients,
    ) -> Result<(), GraphError> {
        if !self.evaluated {
            return Err(GraphError::NotEvaluated);
        }
        let out_val = self.val(output);
        if out_val.shape() != adjoint.shape() {
            return Err(GraphError::Shape {
                op: "backward",
                detail: format!(
                    "adjoint {:?} vs output {:?}",
                    adjoint.shape(),
                    out_val.shape()
                ),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(adjoint.clone());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if let Op::Param(name) = &node.op {
                match grads.get_mut(name) {
                    Some(acc) => acc.add_scaled(&g, 1.0),
                    None => {
                        grads.insert(name.clone(), g);
                    }
                }
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_scaled(&pg, 1.0),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` with respect to each parent.
    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        let out = self.values[i].as_ref().expect("evaluated");
        match &self.nodes[i].op {
            Op::Input(_) | Op::Param(_) | Op::Constant(_) => Vec::new(),
            Op::MatMul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                if y.rank() == 1 {
                    // out[m] = x[m,k] y[k]
                    let (m, k) = (x.shape()[0], x.shape()[1]);
                    let mut gx = vec![0.0; m * k];
                    let mut gy = vec![0.0; k];
                    for r in 0..m {
                        let gr = g.data()[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let xrow = &x.data()[r * k..(r + 1) * k];
                        for c in 0..k {
                            gx[r * k + c] = gr * y.data()[c];
                            gy[c] += gr * xrow[c];
                        }
                    }
                    vec![
                        (*a, Tensor::from_parts(vec![m, k], gx)),
                        (*b, Tensor::from_parts(vec![k], gy)),
                    ]
                } else {
                    let gx = g.matmul(&y.transpose()).expect("shapes checked in forward");
                    let gy = x.transpose().matmul(g).expect("shapes checked in forward");
                    vec![(*a, gx), (*b, gy)]
                }
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (x, y) = (self.val(*a), self.val(*b));
                vec![
                    (*a, zip_map(g, y, |p, q| p * q)),
                    (*b, zip_map(g, x, |p, q| p * q)),
                ]
            }
            Op::Scale(a, k) => {
                let k = *k;
                vec![(*a, g.map(|v| v * k))]
            }
            Op::Offset(a, _) | Op::Reshape(a, _) => {
                let shape = self.val(*a).shape().to_vec();
                vec![(*a, Tensor::from_parts(shape, g.data().to_vec()))]
            }
            Op::Sigmoid(a) => vec![(*a, zip_map(g, out, |p, s| p * s * (1.0 - s)))],
            Op::Tanh(a) => vec![(*a, zip_map(g, out, |p, t| p * (1.0 - t * t)))],
            Op::Exp(a) => vec![(*a, zip_map(g, out, |p, e| p * e))],
            Op::Log(a) => vec![(*a, zip_map(g, self.val(*a), |p, x| p / x))],
            Op::ClampMin(a, lo) => {
                let lo = *lo;
                vec![(
                    *a,
                    zip_map(g, self.val(*a), |p, x| if x > lo { p } else { 0.0 }),
                )]
            }
            Op::Sum(a) => {
                let x = self.val(*a);
                vec![(*a, Tensor::full(x.shape(), g.data()[0]))]
            }
            Op::Mean(a) => {
                let x = self.val(*a);
                vec![(*a, Tensor::full(x.shape(), g.data()[0] / x.len() as f64))]
            }
            Op::Concat(parts, axis) => {
                let shapes: Vec<Vec<usize>> = parts
                    .iter()
                    .map(|p| self.val(*p).shape().to_vec())
                    .collect();
                split_grad(g, &shapes, *axis)
                    .into_iter()
                    .zip(parts)
                    .map(|(t, p)| (*p, t))
                    .collect()
            }
            Op::Select(a, index) => {
                let x = self.val(*a);
                let inner = g.len();
                let mut data = vec![0.0; x.len()];
                data[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
            }
            Op::Softmax(a) => {
                let width = *out.shape().last().expect("rank ≥ 1");
                let mut data = Vec::with_capacity(out.len());
                for (p, gr) in out.data().chunks(width).zip(g.data().chunks(width)) {
                    let inner: f64 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                    data.extend(p.iter().zip(gr).map(|(pi, gi)| pi * (gi - inner)));
                }
                vec![(*a, Tensor::from_parts(out.shape().to_vec(), data))]
            }
            Op::Norm(a) => {
                let x = self.val(*a);
                let n = out.data()[0];
                let scale = if n > 0.0 { g.data()[0] / n } else { 0.0 };
                vec![(*a, x.map(|v| v * scale))]
            }
            Op::Squash(a) => {
                let x = self.val(*a);
                let width = *x.shape().last().expect("rank ≥ 1");
                let mut data = Vec::with_capacity(x.len());
                for (s, gr) in x.data().chunks(width).zip(g.data().chunks(width)) {
                    data.extend(squash_vjp(s, gr));
                }
                vec![(*a, Tensor::from_parts(x.shape().to_vec(), data))]
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|p| self.val(*p)).collect();
                let grads = op.backward(&vals, out, g);
                inputs.iter().copied().zip(grads).collect()
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn last_dim(x: &Tensor) -> Result<usize, String> {
    match x.shape().last() {
        Some(&w) if w > 0 => Ok(w),
        _ => Err(format!("needs a non-empty last axis, got {:?}", x.shape())),
    }
}

/// Squash applied to one capsule vector.
pub fn squash_slice(s: &[f64]) -> Vec<f64> {
    let sq: f64 = s.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return vec![0.0; s.len()];
    }
    let n = sq.sqrt();
    let k = sq / (1.0 + sq) / n;
    s.iter().map(|v| v * k).collect()
}

// v = g(n)·s with g(n) = n/(1+n²); dv/ds = g·I + (g'(n)/n)·s sᵀ.
fn squash_vjp(s: &[f64], grad: &[f64]) -> Vec<f64> {
    let sq: f64 = s.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return vec![0.0; s.len()];
    }
    let n = sq.sqrt();
    let g = n / (1.0 + sq);
    let dg = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq));
    let sg: f64 = s.iter().zip(grad).map(|(a, b)| a * b).sum();
    let k = dg / n * sg;
    s.iter().zip(grad).map(|(si, gi)| g * gi + k * si).collect()
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, String> {
    let first = parts.first().ok_or("no parts")?;
    if axis >= first.rank() {
        return Err(format!("axis {axis} out of range for {:?}", first.shape()));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(format!(
                "{:?} vs {:?} along axis {axis}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    let mut data = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

fn split_grad(g: &Tensor, shapes: &[Vec<usize>], axis: usize) -> Vec<Tensor> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let mut outs: Vec<Vec<f64>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (s, o) in shapes.iter().zip(outs.iter_mut()) {
            let chunk = s[axis] * inner;
            o.extend_from_slice(&g.data()[pos..pos + chunk]);
            pos += chunk;
        }
    }
    outs.into_iter()
        .zip(shapes)
        .map(|(d, s)| Tensor::from_parts(s.clone(), d))
        .collect()
}
