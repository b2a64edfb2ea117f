//! Central-difference gradient checking.
//!
//! The checker replays a scalar-loss closure while nudging one parameter
//! element at a time, entirely in no-grad mode, and compares the resulting
//! slope against the gradient produced by backpropagation. The
//! finite-difference side never touches the backward machinery, so it acts
//! as an independent oracle for it.

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

/// Worst relative error observed in one named parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

/// Gradient-check results for every parameter group.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_err <= tol)
    }

    pub fn failing_groups(&self, tol: f64) -> Vec<&GroupReport> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_err > tol)
            .collect()
    }
}

/// Relative error with the denominator floored at 1e-2 so that near-zero
/// gradients are judged on an absolute scale where the finite-difference
/// estimator's own round-off noise (about 1e-9 for unit-scale losses at
/// eps = 1e-6) does not dominate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Compare backpropagated gradients of `f` against central finite
/// differences for every element of every named parameter.
///
/// `f` must be deterministic given the current parameter values (dropout in
/// inference mode, any noise frozen).
pub fn gradient_check<F>(f: F, params: &[(String, Tensor)], eps: f64) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    let loss_val = loss.item();
    if !loss_val.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {loss_val}")));
    }
    loss.backward()?;

    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad_vec().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut groups = Vec::with_capacity(params.len());
    for ((name, p), grads) in params.iter().zip(&analytic) {
        let original = p.to_vec();
        let mut max_rel = 0.0f64;
        for i in 0..original.len() {
            let mut probe = original.clone();
            probe[i] = original[i] + eps;
            p.set_data(&probe);
            let plus = no_grad(&f)?.item();
            probe[i] = original[i] - eps;
            p.set_data(&probe);
            let minus = no_grad(&f)?.item();
            p.set_data(&original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while probing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            max_rel = max_rel.max(relative_error(grads[i], numeric));
        }
        groups.push(GroupReport {
            name: name.clone(),
            elements: original.len(),
            max_rel_err: max_rel,
        });
    }
    Ok(GradCheckReport { groups })
}

/// Central-difference derivative of a scalar function of one tensor,
/// element by element. Shared by the unit tests as their oracle.
pub fn central_difference<F>(f: F, x: &Tensor, eps: f64) -> Result<Vec<f64>>
where
    F: Fn() -> Result<Tensor>,
{
    let original = x.to_vec();
    let mut out = vec![0.0; original.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut probe = original.clone();
        probe[i] = original[i] + eps;
        x.set_data(&probe);
        let plus = no_grad(&f)?.item();
        probe[i] = original[i] - eps;
        x.set_data(&probe);
        let minus = no_grad(&f)?.item();
        x.set_data(&original);
        *slot = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}
