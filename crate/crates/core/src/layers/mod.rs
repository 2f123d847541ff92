//! Per-domain network: Bi-GRU encoder, capsule layer, dense softmax head.

mod capsule;
mod graph;
mod gru;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wcaps_autodiff::{softmax, GraphError, Tensor};

use crate::error::{Error, Result};

pub use capsule::{
    capsule_layer, dynamic_routing, predict_vectors, squash, CapsuleParams, Routing,
};
pub use graph::{
    bigru_graph, build_network_graph, capsule_graph, CapsulePredictOp, GruCell, NetworkGraph,
    RoutingOp, PROB_FLOOR,
};
pub use gru::{bigru_forward, gru_sequence, gru_step, gru_step_with, BiGruParams, GruParams};

pub(crate) fn shape_error(op: &'static str, detail: String) -> Error {
    Error::Graph(GraphError::Shape { op, detail })
}

/// Candidate-state nonlinearity inside the GRU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateActivation {
    #[default]
    Tanh,
    Sigmoid,
}

impl CandidateActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            CandidateActivation::Tanh => x.tanh(),
            CandidateActivation::Sigmoid => wcaps_autodiff::sigmoid(x),
        }
    }
}

/// `Standard` is `e^{f_i}/Σe^{f_j}`. `Literal` negates the logits first
/// (a softmin) and exists only for auditing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxMode {
    #[default]
    Standard,
    Literal,
}

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    pub fn zeros(input: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[NUM_CLASSES, input]),
            bias: Tensor::zeros(&[NUM_CLASSES]),
        }
    }
}

/// Class probabilities for a flattened capsule vector.
pub fn dense_softmax(flat: &[f64], params: &HeadParams, mode: SoftmaxMode) -> Result<Vec<f64>> {
    let ws = params.weight.shape();
    if ws.len() != 2 || ws[1] != flat.len() || params.bias.len() != ws[0] {
        return Err(shape_error(
            "dense_softmax",
            format!(
                "input of {} vs weight {:?}, bias {:?}",
                flat.len(),
                ws,
                params.bias.shape()
            ),
        ));
    }
    let logits = params.weight.matmul(&Tensor::vector(flat.to_vec()))?;
    let mut f: Vec<f64> = logits
        .data()
        .iter()
        .zip(params.bias.data())
        .map(|(a, b)| a + b)
        .collect();
    if mode == SoftmaxMode::Literal {
        f.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(softmax(&f))
}

/// Shape hyperparameters of one domain network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkArch {
    pub seq_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_capsules: usize,
    pub capsule_dim: usize,
    pub routing_iterations: usize,
    pub candidate: CandidateActivation,
    pub softmax: SoftmaxMode,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self {
            seq_len: 16,
            embed_dim: 32,
            hidden_dim: 64,
            num_capsules: 4,
            capsule_dim: 8,
            routing_iterations: 3,
            candidate: CandidateActivation::Tanh,
            softmax: SoftmaxMode::Standard,
        }
    }
}

impl NetworkArch {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.seq_len,
            self.embed_dim,
            self.hidden_dim,
            self.num_capsules,
            self.capsule_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        if self.routing_iterations < 1 {
            return Err(Error::contract("routing needs at least one iteration"));
        }
        Ok(())
    }

    pub fn flat_dim(&self) -> usize {
        self.num_capsules * self.capsule_dim
    }
}

/// All trainable tensors of one domain network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub bigru: BiGruParams,
    pub capsule: CapsuleParams,
    pub head: HeadParams,
}

/// Output of the plain (graph-free) forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub hidden: Tensor,
    pub routing: Routing,
    pub probabilities: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform draws")
}

fn init_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruParams {
    let mut p = GruParams::zeros(input, hidden);
    for (name, t) in gru::GRU_FIELDS.iter().zip(p.fields_mut()) {
        let fan_in = match &name[..1] {
            "w" => input,
            _ => hidden,
        };
        *t = uniform(rng, t.shape(), fan_in);
    }
    p
}

impl NetworkParams {
    /// Seeded uniform initialization in `±1/√fan_in`.
    pub fn init(arch: &NetworkArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h) = (arch.embed_dim, arch.hidden_dim);
        let bigru = BiGruParams {
            forward: init_gru(&mut rng, e, h),
            backward: init_gru(&mut rng, e, h),
        };
        let cap_shape = [arch.seq_len, arch.num_capsules, arch.capsule_dim, 2 * h];
        let capsule = CapsuleParams {
            weights: uniform(&mut rng, &cap_shape, 2 * h),
            routing_iterations: arch.routing_iterations,
        };
        let flat = arch.flat_dim();
        let head = HeadParams {
            weight: uniform(&mut rng, &[NUM_CLASSES, flat], flat),
            bias: uniform(&mut rng, &[NUM_CLASSES], flat),
        };
        Ok(Self {
            bigru,
            capsule,
            head,
        })
    }

    /// Named tensors in a fixed order. Names match the graph parameters.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(20);
        for (dir, p) in [("fw", &self.bigru.forward), ("bw", &self.bigru.backward)] {
            for (field, t) in gru::GRU_FIELDS.iter().zip(p.fields()) {
                out.push((format!("bigru.{dir}.{field}"), t));
            }
        }
        out.push(("capsule.w".to_string(), &self.capsule.weights));
        out.push(("head.w".to_string(), &self.head.weight));
        out.push(("head.b".to_string(), &self.head.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(20);
        for (dir, p) in [
            ("fw", &mut self.bigru.forward),
            ("bw", &mut self.bigru.backward),
        ] {
            for (field, t) in gru::GRU_FIELDS.iter().zip(p.fields_mut()) {
                out.push((format!("bigru.{dir}.{field}"), t));
            }
        }
        out.push(("capsule.w".to_string(), &mut self.capsule.weights));
        out.push(("head.w".to_string(), &mut self.head.weight));
        out.push(("head.b".to_string(), &mut self.head.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Plain inference on an embedded `[seq_len, embed_dim]` matrix.
    pub fn forward(&self, embedded: &Tensor, arch: &NetworkArch) -> Result<NetworkOutput> {
        let hidden = bigru_forward(embedded, &self.bigru, arch.candidate)?;
        let routing = capsule_layer(&hidden, &self.capsule)?;
        let probabilities = dense_softmax(routing.capsules.data(), &self.head, arch.softmax)?;
        Ok(NetworkOutput {
            hidden,
            routing,
            probabilities,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_examples() {
        let zero = HeadParams::zeros(3);
        let p = dense_softmax(&[0.4, -1.0, 2.0], &zero, SoftmaxMode::Standard).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let bias_only = |b: [f64; 2]| HeadParams {
            weight: Tensor::zeros(&[2, 1]),
            bias: Tensor::vector(b.to_vec()),
        };
        let a = dense_softmax(&[0.0], &bias_only([1.0, 1.0]), SoftmaxMode::Standard).unwrap();
        let b = dense_softmax(&[0.0], &bias_only([11.0, 11.0]), SoftmaxMode::Standard).unwrap();
        assert_eq!(a, b);
        let p = dense_softmax(&[0.0], &bias_only([2.0, 0.0]), SoftmaxMode::Standard).unwrap();
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
        let q = dense_softmax(&[0.0], &bias_only([2.0, 0.0]), SoftmaxMode::Literal).unwrap();
        assert!((q[0] - p[1]).abs() < 1e-15);
        assert!(dense_softmax(&[0.0, 1.0], &bias_only([0.0, 0.0]), SoftmaxMode::Standard).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = NetworkArch {
            seq_len: 5,
            embed_dim: 4,
            hidden_dim: 3,
            ..NetworkArch::default()
        };
        let a = NetworkParams::init(&arch, 7).unwrap();
        assert_eq!(a, NetworkParams::init(&arch, 7).unwrap());
        assert_ne!(a, NetworkParams::init(&arch, 8).unwrap());
        let bound = 1.0 / 4f64.sqrt();
        assert!(a.bigru.forward.w_z.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(a.capsule.weights.shape(), &[5, 4, 8, 6]);
        assert_eq!(a.named().len(), 21);
    }

    #[test]
    fn forward_shapes() {
        let arch = NetworkArch {
            seq_len: 4,
            embed_dim: 3,
            hidden_dim: 5,
            ..NetworkArch::default()
        };
        let p = NetworkParams::init(&arch, 1).unwrap();
        let x = Tensor::new(
            vec![4, 3],
            (0..12).map(|k| (k as f64).cos() * 0.2).collect(),
        )
        .unwrap();
        let out = p.forward(&x, &arch).unwrap();
        assert_eq!(out.hidden.shape(), &[4, 10]);
        assert_eq!(out.routing.capsules.shape(), &[4, 8]);
        assert!((out.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
