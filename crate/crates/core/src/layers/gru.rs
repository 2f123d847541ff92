//! GRU cell and bidirectional sequence pass.

use wcaps_autodiff::{sigmoid, Tensor};

use super::{shape_error, CandidateActivation};
use crate::error::Result;

/// Weights of one GRU direction. `w_*` map input → hidden, `u_*` hidden →
/// hidden, `b_*` are hidden-sized biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_n: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

pub(crate) const GRU_FIELDS: [&str; 9] = [
    "w_z", "w_r", "w_h", "u_z", "u_r", "u_n", "b_z", "b_r", "b_h",
];

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_n: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape().get(1).copied().unwrap_or(0)
    }

    pub(crate) fn fields(&self) -> [&Tensor; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_n, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    pub(crate) fn fields_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_n,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        for (name, t) in GRU_FIELDS.iter().zip(self.fields()) {
            let want: &[usize] = match &name[..1] {
                "w" => &[h, i],
                "u" => &[h, h],
                _ => &[h],
            };
            if t.shape() != want {
                return Err(shape_error(
                    "gru",
                    format!("{name} has shape {:?}, expected {want:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

fn affine(w: &Tensor, x: &[f64], u: &Tensor, h: &[f64], b: &Tensor) -> Vec<f64> {
    let (rows, xin) = (w.shape()[0], w.shape()[1]);
    let hin = u.shape()[1];
    (0..rows)
        .map(|r| {
            let wx: f64 = w.data()[r * xin..(r + 1) * xin]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
            let uh: f64 = u.data()[r * hin..(r + 1) * hin]
                .iter()
                .zip(h)
                .map(|(a, b)| a * b)
                .sum();
            wx + uh + b.data()[r]
        })
        .collect()
}

/// One step with the standard tanh candidate.
pub fn gru_step(x: &[f64], h_prev: &[f64], params: &GruParams) -> Result<Vec<f64>> {
    gru_step_with(x, h_prev, params, CandidateActivation::Tanh)
}

/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h' = act(W_h x + U_n (r ⊙ h) + b_h)`, `h_t = (1 − z) ⊙ h + z ⊙ h'`.
pub fn gru_step_with(
    x: &[f64],
    h_prev: &[f64],
    params: &GruParams,
    candidate: CandidateActivation,
) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() != params.input_dim() || h_prev.len() != params.hidden_dim() {
        return Err(shape_error(
            "gru_step",
            format!(
                "x has {} entries (want {}), h has {} (want {})",
                x.len(),
                params.input_dim(),
                h_prev.len(),
                params.hidden_dim()
            ),
        ));
    }
    Ok(step_unchecked(x, h_prev, params, candidate))
}

fn step_unchecked(x: &[f64], h: &[f64], p: &GruParams, candidate: CandidateActivation) -> Vec<f64> {
    let z: Vec<f64> = affine(&p.w_z, x, &p.u_z, h, &p.b_z)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = affine(&p.w_r, x, &p.u_r, h, &p.b_r)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = affine(&p.w_h, x, &p.u_n, &rh, &p.b_h)
        .into_iter()
        .map(|v| candidate.apply(v))
        .collect();
    (0..h.len())
        .map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k])
        .collect()
}

/// Runs `params` over the rows of `sequence` starting from a zero state and
/// returns every hidden state, in input order.
pub fn gru_sequence(
    sequence: &Tensor,
    params: &GruParams,
    candidate: CandidateActivation,
    reverse: bool,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if sequence.rank() != 2 || sequence.shape()[1] != params.input_dim() {
        return Err(shape_error(
            "gru_sequence",
            format!(
                "sequence {:?} vs input dim {}",
                sequence.shape(),
                params.input_dim()
            ),
        ));
    }
    let steps = sequence.shape()[0];
    let mut h = vec![0.0; params.hidden_dim()];
    let mut states = vec![Vec::new(); steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        h = step_unchecked(sequence.row(t), &h, params, candidate);
        states[t] = h.clone();
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGruParams {
    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }
}

/// Output row `t` is `(h→_t, h←_t)`: the forward state after reading rows
/// `0..=t` and the backward state after reading rows `t..M` in reverse.
pub fn bigru_forward(
    embedded: &Tensor,
    params: &BiGruParams,
    candidate: CandidateActivation,
) -> Result<Tensor> {
    if params.forward.hidden_dim() != params.backward.hidden_dim() {
        return Err(shape_error(
            "bigru",
            "directions differ in hidden size".into(),
        ));
    }
    let fw = gru_sequence(embedded, &params.forward, candidate, false)?;
    let bw = gru_sequence(embedded, &params.backward, candidate, true)?;
    let steps = embedded.shape()[0];
    let mut data = Vec::with_capacity(steps * params.output_dim());
    for (f, b) in fw.iter().zip(&bw) {
        data.extend_from_slice(f);
        data.extend_from_slice(b);
    }
    Ok(Tensor::new(vec![steps, params.output_dim()], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params() -> GruParams {
        let one = || Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let mut p = GruParams::zeros(1, 1);
        p.w_z = one();
        p.u_z = one();
        p.w_h = one();
        p
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruParams::zeros(3, 2);
        let h = gru_step(&[0.3, -1.0, 2.0], &[0.8, -0.4], &p).unwrap();
        assert_eq!(h, vec![0.4, -0.2]);
        let h = gru_step(&[0.0; 3], &[0.0; 2], &p).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let h = gru_step(&[1.0], &[0.0], &scalar_params()).unwrap();
        let z = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((z - 0.7311).abs() < 1e-4);
        assert!((1.0f64.tanh() - 0.7616).abs() < 1e-4);
        assert!((h[0] - z * 1.0f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.5568).abs() < 1e-4);
    }

    #[test]
    fn literal_sigmoid_candidate() {
        let h = gru_step_with(
            &[1.0],
            &[0.0],
            &scalar_params(),
            CandidateActivation::Sigmoid,
        )
        .unwrap();
        let z = sigmoid(1.0);
        assert!((h[0] - z * z).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let p = GruParams::zeros(3, 2);
        assert!(gru_step(&[1.0], &[0.0, 0.0], &p).is_err());
    }

    #[test]
    fn zero_bigru_is_zero() {
        let p = BiGruParams {
            forward: GruParams::zeros(2, 3),
            backward: GruParams::zeros(2, 3),
        };
        let x = Tensor::matrix(4, 2, vec![0.5, -0.1, 0.2, 0.9, -0.3, 0.3, 0.0, 1.0]).unwrap();
        let out = bigru_forward(&x, &p, CandidateActivation::Tanh).unwrap();
        assert_eq!(out.shape(), &[4, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
