//! Capsule predictions, squash and routing-by-agreement.

use wcaps_autodiff::{dot, softmax, squash_slice, Tensor};

use super::shape_error;
use crate::error::{Error, Result};

/// Transformation weights, one `capsule_dim × input_dim` matrix per
/// (input position, output capsule), stored as `[N, J, capsule_dim, input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleParams {
    pub weights: Tensor,
    pub routing_iterations: usize,
}

impl CapsuleParams {
    pub fn positions(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn num_capsules(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn capsule_dim(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.rank() != 4 {
            return Err(shape_error(
                "capsule",
                format!("weights must be rank 4, got {:?}", self.weights.shape()),
            ));
        }
        if self.routing_iterations < 1 || self.num_capsules() < 1 {
            return Err(Error::contract("capsule layer needs R ≥ 1 and J ≥ 1"));
        }
        Ok(())
    }
}

/// `‖s‖²/(1+‖s‖²) · s/‖s‖`, with `squash(0) = 0`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    squash_slice(s)
}

/// Prediction vectors `û_{j|i} = W_ij · h_i` as an `[N, J, d]` tensor.
pub fn predict_vectors(hidden: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let ws = weights.shape();
    if weights.rank() != 4 || hidden.rank() != 2 || hidden.shape() != [ws[0], ws[3]] {
        return Err(shape_error(
            "capsule_predict",
            format!("hidden {:?} vs weights {:?}", hidden.shape(), ws),
        ));
    }
    let (n, j, d, din) = (ws[0], ws[1], ws[2], ws[3]);
    let w = weights.data();
    let mut out = vec![0.0; n * j * d];
    for i in 0..n {
        let h = hidden.row(i);
        for c in 0..j {
            for a in 0..d {
                let base = ((i * j + c) * d + a) * din;
                out[(i * j + c) * d + a] = dot(&w[base..base + din], h);
            }
        }
    }
    Ok(Tensor::new(vec![n, j, d], out)?)
}

/// Output capsules `v` (`[J, d]`) and coupling coefficients `c` (`[N, J]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub capsules: Tensor,
    pub coupling: Tensor,
}

/// Weighted sum `s_j = Σ_i c_ij û_{j|i}` for an `[N, J, d]` prediction tensor.
pub(crate) fn weighted_sum(u_hat: &Tensor, coupling: &[f64]) -> Vec<f64> {
    let [n, j, d] = [u_hat.shape()[0], u_hat.shape()[1], u_hat.shape()[2]];
    let u = u_hat.data();
    let mut s = vec![0.0; j * d];
    for i in 0..n {
        for c in 0..j {
            let w = coupling[i * j + c];
            let base = (i * j + c) * d;
            for a in 0..d {
                s[c * d + a] += w * u[base + a];
            }
        }
    }
    s
}

/// Routing by agreement. Logits start at zero; each iteration takes
/// `c_i = softmax_j(b_i)`, forms `s_j`, squashes it into `v_j`, and then
/// raises `b_ij` by the agreement `û_{j|i} · v_j`.
pub fn dynamic_routing(u_hat: &Tensor, iterations: usize) -> Result<Routing> {
    if iterations < 1 {
        return Err(Error::contract("routing needs at least one iteration"));
    }
    if u_hat.rank() != 3 || u_hat.shape()[1] == 0 || u_hat.shape()[2] == 0 {
        return Err(shape_error(
            "routing",
            format!("predictions must be [N, J, d], got {:?}", u_hat.shape()),
        ));
    }
    let [n, j, d] = [u_hat.shape()[0], u_hat.shape()[1], u_hat.shape()[2]];
    let u = u_hat.data();
    let mut logits = vec![0.0; n * j];
    let mut coupling = vec![0.0; n * j];
    let mut v = vec![0.0; j * d];
    for iter in 0..iterations {
        for i in 0..n {
            let row = softmax(&logits[i * j..(i + 1) * j]);
            coupling[i * j..(i + 1) * j].copy_from_slice(&row);
        }
        let s = weighted_sum(u_hat, &coupling);
        for c in 0..j {
            v[c * d..(c + 1) * d].copy_from_slice(&squash(&s[c * d..(c + 1) * d]));
        }
        if iter + 1 < iterations {
            for i in 0..n {
                for c in 0..j {
                    let base = (i * j + c) * d;
                    logits[i * j + c] += dot(&u[base..base + d], &v[c * d..(c + 1) * d]);
                }
            }
        }
    }
    Ok(Routing {
        capsules: Tensor::new(vec![j, d], v)?,
        coupling: Tensor::new(vec![n, j], coupling)?,
    })
}

/// Prediction vectors followed by routing.
pub fn capsule_layer(hidden: &Tensor, params: &CapsuleParams) -> Result<Routing> {
    params.validate()?;
    let u_hat = predict_vectors(hidden, &params.weights)?;
    dynamic_routing(&u_hat, params.routing_iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squash_examples() {
        assert_eq!(squash(&[0.0, 0.0]), vec![0.0, 0.0]);
        let v = squash(&[3.0, 4.0]);
        assert!((v[0] - 0.57692).abs() < 1e-5 && (v[1] - 0.76923).abs() < 1e-5);
        let v = squash(&[0.6, 0.8]);
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((n - 0.5).abs() < 1e-15);
        assert!((v[0] / v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_iteration_is_uniform() {
        let u = Tensor::new(
            vec![3, 4, 2],
            (0..24).map(|k| (k as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let r = dynamic_routing(&u, 1).unwrap();
        assert!(r.coupling.data().iter().all(|&c| (c - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_output_capsule() {
        let u = Tensor::new(vec![3, 1, 2], vec![0.1, 0.2, -0.3, 0.5, 0.4, 0.4]).unwrap();
        let r = dynamic_routing(&u, 3).unwrap();
        assert!(r.coupling.data().iter().all(|&c| c == 1.0));
        let expected = squash(&[0.2, 1.1]);
        for (a, b) in r.capsules.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        let u = Tensor::zeros(&[1, 1, 1]);
        assert!(matches!(dynamic_routing(&u, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_weights_and_identity() {
        let hidden = Tensor::matrix(2, 3, vec![0.5, -0.2, 0.1, 0.3, 0.3, 0.3]).unwrap();
        let p = CapsuleParams {
            weights: Tensor::zeros(&[2, 2, 4, 3]),
            routing_iterations: 3,
        };
        let r = capsule_layer(&hidden, &p).unwrap();
        assert!(r.capsules.data().iter().all(|&v| v == 0.0));

        let h1 = Tensor::matrix(1, 2, vec![0.7, -1.1]).unwrap();
        let p = CapsuleParams {
            weights: Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            routing_iterations: 3,
        };
        let r = capsule_layer(&h1, &p).unwrap();
        assert_eq!(r.capsules.data(), squash(&[0.7, -1.1]).as_slice());
    }
}
