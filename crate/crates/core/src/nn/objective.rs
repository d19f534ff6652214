//! Training-loss contract: a scalar function of the network parameters and
//! an auxiliary vector (e.g. drift parameters), with its full gradient.

use super::mlp::{JetAdjoint, JetTrace, MlpParams};
use crate::error::{check_dim, Error, Result};

/// A loss built from network jets at a fixed set of scalar inputs.
///
/// `evaluate` receives the jets at [`Objective::inputs`], returns the loss
/// and writes the loss adjoints with respect to each jet channel and to the
/// auxiliary vector. `param_term` adds any part that depends on the raw
/// parameters directly (weight decay and similar).
pub trait Objective {
    fn inputs(&self) -> &[f64];

    fn evaluate(&self, jets: &JetTrace, aux: &[f64], adj: &mut JetAdjoint, grad_aux: &mut [f64]) -> f64;

    fn param_term(&self, _params: &MlpParams, _grad: &mut [f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad_params: Vec<f64>,
    pub grad_aux: Vec<f64>,
}

/// Loss value plus gradients with respect to every weight, bias and
/// auxiliary entry. A non-finite loss is reported as
/// [`Error::Divergence`] with iteration 0; trainers rewrite the iteration.
pub fn loss_grad<O: Objective + ?Sized>(obj: &O, params: &MlpParams, aux: &[f64]) -> Result<LossGrad> {
    let mut grad_params = vec![0.0; params.len()];
    let mut grad_aux = vec![0.0; aux.len()];
    let mut value = obj.param_term(params, &mut grad_params);
    if !obj.inputs().is_empty() {
        let trace = params.jet2_batch(obj.inputs())?;
        let mut adj = JetAdjoint::zeros(trace.batch(), params.output_dim());
        value += obj.evaluate(&trace, aux, &mut adj, &mut grad_aux);
        trace.backward(params, &adj, &mut grad_params)?;
    }
    check_dim(aux.len(), grad_aux.len())?;
    if !value.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    Ok(LossGrad { value, grad_params, grad_aux })
}

/// Loss value only (still runs the jets, skips the reverse pass).
pub fn loss_value<O: Objective + ?Sized>(obj: &O, params: &MlpParams, aux: &[f64]) -> Result<f64> {
    let mut scratch = vec![0.0; params.len()];
    let mut value = obj.param_term(params, &mut scratch);
    if !obj.inputs().is_empty() {
        let trace = params.jet2_batch(obj.inputs())?;
        let mut adj = JetAdjoint::zeros(trace.batch(), params.output_dim());
        let mut ga = vec![0.0; aux.len()];
        value += obj.evaluate(&trace, aux, &mut adj, &mut ga);
    }
    Ok(value)
}
