//! Central finite-difference gradient checking.

use std::collections::BTreeMap;

use crate::graph::{Bindings, Graph, NodeId};
use crate::{GraphError, Tensor};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for the relative error. Below this gradient magnitude
/// the comparison behaves like an absolute check at `tolerance * floor`,
/// which keeps round-off in near-zero entries from dominating the report.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_rel_error <= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares the analytic gradient of the scalar `output` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` for every entry of every parameter.
///
/// Perturbed evaluations run with custom-op auxiliary state frozen at the
/// unperturbed pass, so ops that treat part of their computation as a
/// constant are checked against the same function their backward differentiates.
pub fn finite_difference_check(
    graph: &mut Graph,
    bindings: &Bindings<'_>,
    output: NodeId,
    tolerance: f64,
) -> Result<CheckReport, GraphError> {
    graph.set_frozen(false);
    let base = graph.eval(bindings, output)?;
    if base.len() != 1 {
        return Err(GraphError::NotScalar(base.shape().to_vec()));
    }
    let analytic = graph.backward(output, &Tensor::full(base.shape(), 1.0))?;

    let names: Vec<String> = graph.param_names().into_iter().map(String::from).collect();
    let mut working: BTreeMap<String, Tensor> = BTreeMap::new();
    for name in &names {
        let t = bindings
            .get(name)
            .ok_or_else(|| GraphError::Unbound(name.clone()))?;
        working.insert(name.clone(), t.clone());
    }

    graph.set_frozen(true);
    let result = (|| {
        let mut params = Vec::with_capacity(names.len());
        for name in &names {
            let grad = analytic
                .get(name)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(working[name].shape()));
            let mut check = ParamCheck {
                name: name.clone(),
                entries: grad.len(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for k in 0..grad.len() {
                let original = working[name].data()[k];
                let (up, down) = (original + FD_STEP, original - FD_STEP);
                let f_plus = perturbed(graph, bindings, &mut working, name, k, up, output)?;
                let f_minus = perturbed(graph, bindings, &mut working, name, k, down, output)?;
                working.get_mut(name).expect("present").data_mut()[k] = original;
                // divide by the step actually taken after rounding
                let numeric = (f_plus - f_minus) / (up - down);
                let err = relative_error(grad.data()[k], numeric);
                if err > check.max_rel_error || k == 0 {
                    check.max_rel_error = err;
                    check.worst_index = k;
                    check.analytic = grad.data()[k];
                    check.numeric = numeric;
                }
            }
            params.push(check);
        }
        Ok(CheckReport { params, tolerance })
    })();
    graph.set_frozen(false);
    result
}

fn perturbed(
    graph: &mut Graph,
    bindings: &Bindings<'_>,
    working: &mut BTreeMap<String, Tensor>,
    name: &str,
    k: usize,
    value: f64,
    output: NodeId,
) -> Result<f64, GraphError> {
    working.get_mut(name).expect("present").data_mut()[k] = value;
    let mut b = bindings.clone();
    for (n, t) in working.iter() {
        b.bind(n.as_str(), t);
    }
    let out = graph.eval(&b, output)?;
    Ok(out.data()[0])
}
