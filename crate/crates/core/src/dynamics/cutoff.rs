//! Cutoff time: first time the flow from `x0` is within `M`-distance
//! `N^{-1/2}` of the fixed point.

use super::{default_step, rk4_step, DynamicsError, Metric, StabilityCertificate};
use crate::model::Model;

#[derive(Debug, Clone, Copy)]
pub struct CutoffOptions {
    /// RK4 step; `None` uses the default step for the certificate.
    pub step: Option<f64>,
    /// Give up if no crossing happens before this time.
    pub max_horizon: f64,
}

impl Default for CutoffOptions {
    fn default() -> Self {
        CutoffOptions {
            step: None,
            max_horizon: 1e3,
        }
    }
}

const TIME_TOL: f64 = 1e-10;

/// `t_N(x0)` for the certificate's fixed point and metric.
pub fn cutoff_time(
    model: &Model,
    cert: &StabilityCertificate,
    x0: &[f64],
    n: f64,
) -> Result<f64, DynamicsError> {
    let step = default_step(cert.rho_hat);
    cutoff_time_with(
        model,
        &cert.c,
        &cert.metric,
        x0,
        n,
        CutoffOptions {
            step: Some(step),
            ..Default::default()
        },
    )
}

/// `t_N(x0)` for an explicit centre and metric. The crossing is located by
/// bisection on the length of the bracketing RK4 step.
pub fn cutoff_time_with(
    model: &Model,
    centre: &[f64],
    metric: &Metric,
    x0: &[f64],
    n: f64,
    opts: CutoffOptions,
) -> Result<f64, DynamicsError> {
    if !(n > 0.0) {
        return Err(DynamicsError::Precondition(format!("N must be positive, got {n}")));
    }
    let h = opts.step.unwrap_or(1e-3);
    if !(h > 0.0) {
        return Err(DynamicsError::Precondition(format!("step must be positive, got {h}")));
    }
    if !model.domain().contains(x0) {
        return Err(crate::model::ModelError::OutsideDomain { point: x0.to_vec() }.into());
    }
    let level = n.powf(-0.5);
    if metric.dist(x0, centre) <= level {
        return Ok(0.0);
    }
    let max_steps = (opts.max_horizon / h).ceil() as u64;
    let mut y = x0.to_vec();
    for k in 0..max_steps {
        let next = rk4_step(model, &y, h);
        let t0 = k as f64 * h;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t: t0 + h });
        }
        if !model.domain().contains(&next) {
            return Err(DynamicsError::Precondition(format!(
                "flow from {x0:?} left the domain at t = {}",
                t0 + h
            )));
        }
        if metric.dist(&next, centre) <= level {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > TIME_TOL {
                let mid = 0.5 * (lo + hi);
                if metric.dist(&rk4_step(model, &y, mid), centre) <= level {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(t0 + 0.5 * (lo + hi));
        }
        y = next;
    }
    Err(DynamicsError::HorizonExceeded {
        level,
        horizon: opts.max_horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{certify, CertifyOptions};
    use crate::model::{builtin_hamer_sir, parse_model};

    #[test]
    fn linear_decay_has_half_log_cutoff() {
        let m = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n").unwrap();
        for n in [10.0, 1e3, 1e6] {
            let t = cutoff_time_with(&m, &[0.0], &Metric::identity(1), &[1.0], n, CutoffOptions::default())
                .unwrap();
            assert!((t - 0.5 * f64::ln(n)).abs() < 1e-9, "N={n}: {t}");
        }
    }

    #[test]
    fn start_inside_the_level_set_gives_zero() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions::default()).unwrap();
        assert_eq!(cutoff_time(&m, &cert, &[0.5, 1.0], 100.0).unwrap(), 0.0);
    }

    #[test]
    fn sir_cutoff_increment_approaches_log_two() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions::default()).unwrap();
        let t1 = cutoff_time(&m, &cert, &[1.0, 1.0], 1e4).unwrap();
        let t4 = cutoff_time(&m, &cert, &[1.0, 1.0], 4e4).unwrap();
        let want = f64::ln(4.0) / (2.0 * cert.rho_hat);
        assert!(((t4 - t1) / want - 1.0).abs() < 0.05, "{} vs {want}", t4 - t1);
    }

    #[test]
    fn cutoff_time_is_nondecreasing_in_n() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions::default()).unwrap();
        let mut prev = 0.0;
        for k in 0..12 {
            let n = 10.0 * 2f64.powi(k);
            let t = cutoff_time(&m, &cert, &[1.0, 1.0], n).unwrap();
            assert!(t >= prev, "N={n}: {t} < {prev}");
            prev = t;
        }
    }

    #[test]
    fn missing_crossing_is_an_error() {
        let m = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n").unwrap();
        let r = cutoff_time_with(
            &m,
            &[0.0],
            &Metric::identity(1),
            &[1.0],
            1e6,
            CutoffOptions {
                step: Some(1e-2),
                max_horizon: 1.0,
            },
        );
        assert!(matches!(r, Err(DynamicsError::HorizonExceeded { .. })));
    }
}
