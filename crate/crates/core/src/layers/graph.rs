//! Differentiable version of the domain network.

use wcaps_autodiff::{CustomOp, Graph, GraphError, NodeId, Tensor};

use super::capsule::{dynamic_routing, predict_vectors, weighted_sum};
use super::gru::GRU_FIELDS;
use super::{CandidateActivation, NetworkArch, SoftmaxMode};

/// Floor applied to probabilities before the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// `(W [N,J,d,k], H [N,k]) → û [N,J,d]`.
#[derive(Debug, Default, Clone)]
pub struct CapsulePredictOp;

impl CustomOp for CapsulePredictOp {
    fn name(&self) -> &'static str {
        "capsule_predict"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, GraphError> {
        predict_vectors(inputs[1], inputs[0]).map_err(|e| GraphError::Shape {
            op: "capsule_predict",
            detail: e.to_string(),
        })
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let (w, h) = (inputs[0], inputs[1]);
        let ws = w.shape();
        let (n, j, d, k) = (ws[0], ws[1], ws[2], ws[3]);
        let mut gw = vec![0.0; w.len()];
        let mut gh = vec![0.0; h.len()];
        let (wd, g) = (w.data(), grad.data());
        for i in 0..n {
            let hi = h.row(i);
            for c in 0..j {
                for a in 0..d {
                    let gi = g[(i * j + c) * d + a];
                    if gi == 0.0 {
                        continue;
                    }
                    let base = ((i * j + c) * d + a) * k;
                    for m in 0..k {
                        gw[base + m] += gi * hi[m];
                        gh[i * k + m] += gi * wd[base + m];
                    }
                }
            }
        }
        vec![
            Tensor::new(ws.to_vec(), gw).expect("finite"),
            Tensor::new(h.shape().to_vec(), gh).expect("finite"),
        ]
    }
}

/// `û [N,J,d] → s [J,d]` with `s_j = Σ_i c_ij û_{j|i}`, where `c` comes from
/// routing by agreement and is treated as a constant when differentiating.
/// While frozen the coefficients from the last unfrozen forward are reused.
#[derive(Debug, Clone)]
pub struct RoutingOp {
    iterations: usize,
    frozen: bool,
    coupling: Option<Tensor>,
}

impl RoutingOp {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            frozen: false,
            coupling: None,
        }
    }

    pub fn coupling(&self) -> Option<&Tensor> {
        self.coupling.as_ref()
    }
}

impl CustomOp for RoutingOp {
    fn name(&self) -> &'static str {
        "routing"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, GraphError> {
        let u = inputs[0];
        if !self.frozen || self.coupling.is_none() {
            let r = dynamic_routing(u, self.iterations).map_err(|e| GraphError::Shape {
                op: "routing",
                detail: e.to_string(),
            })?;
            self.coupling = Some(r.coupling);
        }
        let c = self.coupling.as_ref().expect("set above");
        let s = weighted_sum(u, c.data());
        Tensor::new(vec![u.shape()[1], u.shape()[2]], s)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let u = inputs[0];
        let (n, j, d) = (u.shape()[0], u.shape()[1], u.shape()[2]);
        let c = self.coupling.as_ref().expect("forward ran").data();
        let g = grad.data();
        let mut gu = vec![0.0; u.len()];
        for i in 0..n {
            for cap in 0..j {
                let w = c[i * j + cap];
                let base = (i * j + cap) * d;
                for a in 0..d {
                    gu[base + a] = w * g[cap * d + a];
                }
            }
        }
        vec![Tensor::new(u.shape().to_vec(), gu).expect("finite")]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

/// Graph of one domain network with inputs `x` (`[seq_len, embed_dim]`) and
/// one-hot `target` (`[2]`). `loss` is the cross-entropy of `probs`.
pub struct NetworkGraph {
    pub graph: Graph,
    pub hidden: NodeId,
    pub capsules: NodeId,
    pub probs: NodeId,
    pub loss: NodeId,
}

/// Parameter nodes of one GRU direction, named `{prefix}.{field}`.
pub struct GruCell {
    w: [NodeId; 9],
}

impl GruCell {
    pub fn params(g: &mut Graph, prefix: &str) -> Self {
        let w: Vec<NodeId> = GRU_FIELDS
            .iter()
            .map(|field| g.param(&format!("{prefix}.{field}")))
            .collect();
        Self {
            w: w.try_into().expect("nine fields"),
        }
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId, cand: CandidateActivation) -> NodeId {
        let [w_z, w_r, w_h, u_z, u_r, u_n, b_z, b_r, b_h] = self.w;
        let affine = |g: &mut Graph, w, x, u, h, b| {
            let wx = g.matmul(w, x);
            let uh = g.matmul(u, h);
            let s = g.add(wx, uh);
            g.add(s, b)
        };
        let z = affine(g, w_z, x, u_z, h, b_z);
        let z = g.sigmoid(z);
        let r = affine(g, w_r, x, u_r, h, b_r);
        let r = g.sigmoid(r);
        let rh = g.mul(r, h);
        let c = affine(g, w_h, x, u_n, rh, b_h);
        let c = match cand {
            CandidateActivation::Tanh => g.tanh(c),
            CandidateActivation::Sigmoid => g.sigmoid(c),
        };
        let neg = g.scale(z, -1.0);
        let keep = g.offset(neg, 1.0);
        let old = g.mul(keep, h);
        let new = g.mul(z, c);
        g.add(old, new)
    }
}

/// Bi-GRU over the `seq_len` rows of `x`; parameters are `{prefix}.fw.*`
/// and `{prefix}.bw.*`. Returns a `[seq_len, 2·hidden]` node.
pub fn bigru_graph(
    g: &mut Graph,
    x: NodeId,
    seq_len: usize,
    hidden: usize,
    cand: CandidateActivation,
    prefix: &str,
) -> NodeId {
    let rows: Vec<NodeId> = (0..seq_len).map(|t| g.select(x, t)).collect();
    let mut states = [vec![None; seq_len], vec![None; seq_len]];
    for (dir, name) in ["fw", "bw"].into_iter().enumerate() {
        let cell = GruCell::params(g, &format!("{prefix}.{name}"));
        let mut state = g.constant(Tensor::zeros(&[hidden]));
        let order: Vec<usize> = if dir == 0 {
            (0..seq_len).collect()
        } else {
            (0..seq_len).rev().collect()
        };
        for t in order {
            state = cell.step(g, rows[t], state, cand);
            states[dir][t] = Some(state);
        }
    }
    let parts: Vec<NodeId> = (0..seq_len)
        .flat_map(|t| [states[0][t], states[1][t]])
        .map(|s| s.expect("every position visited"))
        .collect();
    let flat = g.concat(&parts, 0);
    g.reshape(flat, &[seq_len, 2 * hidden])
}

/// Capsule layer on a `[N, k]` node with `[N, J, d, k]` weights. Returns the
/// squashed `[J, d]` capsules.
pub fn capsule_graph(g: &mut Graph, hidden: NodeId, weights: NodeId, iterations: usize) -> NodeId {
    let u_hat = g.custom(Box::new(CapsulePredictOp), &[weights, hidden]);
    let s = g.custom(Box::new(RoutingOp::new(iterations)), &[u_hat]);
    g.squash(s)
}

pub fn build_network_graph(arch: &NetworkArch) -> NetworkGraph {
    let mut g = Graph::new();
    let x = g.input("x");
    let target = g.input("target");
    let hidden = bigru_graph(
        &mut g,
        x,
        arch.seq_len,
        arch.hidden_dim,
        arch.candidate,
        "bigru",
    );
    let cap_w = g.param("capsule.w");
    let capsules = capsule_graph(&mut g, hidden, cap_w, arch.routing_iterations);
    let flat = g.reshape(capsules, &[arch.flat_dim()]);

    let head_w = g.param("head.w");
    let head_b = g.param("head.b");
    let logits = g.matmul(head_w, flat);
    let mut logits = g.add(logits, head_b);
    if arch.softmax == SoftmaxMode::Literal {
        logits = g.scale(logits, -1.0);
    }
    let probs = g.softmax(logits);
    let floored = g.clamp_min(probs, PROB_FLOOR);
    let logp = g.log(floored);
    let picked = g.mul(target, logp);
    let total = g.sum(picked);
    let loss = g.scale(total, -1.0);
    NetworkGraph {
        graph: g,
        hidden,
        capsules,
        probs,
        loss,
    }
}
