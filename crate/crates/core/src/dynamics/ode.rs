//! Fixed-step RK4 flow and Newton fixed-point search.

use nalgebra::DVector;
use serde::Serialize;

use super::DynamicsError;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Termination {
    Horizon,
    Crossing { level: f64 },
    LeftDomain,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowResult {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub terminated_by: Termination,
}

impl FlowResult {
    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("flow has at least the initial state")
    }
}

/// `min(1e-3, 0.01 / rho_hat)`.
pub fn default_step(rho_hat: f64) -> f64 {
    if rho_hat > 0.0 && rho_hat.is_finite() {
        (0.01 / rho_hat).min(1e-3)
    } else {
        1e-3
    }
}

/// One classical Runge-Kutta step.
pub fn rk4_step(model: &Model, y: &[f64], h: f64) -> Vec<f64> {
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    model.drift_unchecked(y, &mut k1);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    model.drift_unchecked(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    model.drift_unchecked(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = y[i] + h * k3[i];
    }
    model.drift_unchecked(&tmp, &mut k4);
    (0..d)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrate from `y0` to `horizon` with fixed step `h` (the last step is
/// shortened to land on the horizon). Stops early if the state leaves the
/// domain; the offending state is not recorded.
pub fn integrate_ode(
    model: &Model,
    y0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<FlowResult, DynamicsError> {
    if !(h > 0.0) || !(horizon >= 0.0) {
        return Err(DynamicsError::Precondition(format!(
            "step must be positive and horizon non-negative (h = {h}, T = {horizon})"
        )));
    }
    if !model.domain().contains(y0) || y0.len() != model.dim() {
        return Err(crate::model::ModelError::OutsideDomain { point: y0.to_vec() }.into());
    }
    let steps = (horizon / h).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(y0.to_vec());
    let mut y = y0.to_vec();
    for k in 0..steps {
        let t0 = k as f64 * h;
        let t1 = ((k + 1) as f64 * h).min(horizon);
        let next = rk4_step(model, &y, t1 - t0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: t1 });
        }
        if !model.domain().contains(&next) {
            return Ok(FlowResult {
                times,
                states,
                terminated_by: Termination::LeftDomain,
            });
        }
        times.push(t1);
        states.push(next.clone());
        y = next;
    }
    Ok(FlowResult {
        times,
        states,
        terminated_by: Termination::Horizon,
    })
}

/// Newton's method on `F(c) = 0`, at most 100 steps, converged when every
/// component of `F` is at most 1e-12 in absolute value. Steps that would
/// leave the domain are halved.
pub fn find_fixed_point(model: &Model, guess: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-12;
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut y = guess.to_vec();
    let mut f = model.eval_drift(&y)?;
    for _ in 0..MAX_ITER {
        if inf_norm(&f) <= TOL {
            return Ok(y);
        }
        let jac = model.eval_jacobian(&y)?;
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| DynamicsError::SingularJacobian { point: y.clone() })?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            if let Ok(fc) = model.eval_drift(&cand) {
                accepted = Some((cand, fc));
                break;
            }
            scale *= 0.5;
        }
        let (next, fnext) = accepted.ok_or_else(|| DynamicsError::SingularJacobian {
            point: y.clone(),
        })?;
        y = next;
        f = fnext;
    }
    if inf_norm(&f) <= TOL {
        return Ok(y);
    }
    Err(DynamicsError::NoConvergence {
        iterations: MAX_ITER,
        residual: inf_norm(&f),
    })
}
