//! Probability of leaving `B_M(c, delta)` before time `T` from a start in
//! `B_M(c, delta')`, against the martingale-based upper bound.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{martingale::zeta_bound, Event, Restriction, SimError, SimOptions, Stepper};
use crate::dynamics::StabilityCertificate;
use crate::model::{Model, ModelError};
use crate::rng::{stream, stream_rng};
use crate::stats::{wilson_interval, Z99};

/// Sampled suprema over `B_M(c, radius)`: total rate `R*` and the spectral
/// norm `L` of the drift Jacobian. Domain points only; the centre is
/// always included.
pub fn ball_suprema(
    model: &Model,
    cert: &StabilityCertificate,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), ModelError> {
    let mut rng = stream_rng(seed, stream::CERT_SAMPLING, radius.to_bits());
    let mut r_star = 0.0f64;
    let mut lip = 0.0f64;
    let mut visit = |y: &[f64]| -> Result<(), ModelError> {
        r_star = r_star.max(model.eval_rates(y)?.iter().sum());
        let jac = model.eval_jacobian(y)?;
        lip = lip.max(jac.singular_values().max());
        Ok(())
    };
    visit(&cert.c)?;
    for k in 0..samples {
        // Alternate interior and boundary points; both suprema of convex
        // quantities tend to sit on the boundary.
        let y = cert.metric.sample_ball(&mut rng, &cert.c, radius, k % 2 == 0);
        if model.domain().contains(&y) {
            visit(&y)?;
        }
    }
    Ok((r_star, lip))
}

#[derive(Debug, Clone)]
pub struct ExitOptions {
    pub n: u64,
    pub seed: u64,
    pub delta: f64,
    pub delta_prime: f64,
    pub horizon: f64,
    pub reps: usize,
    /// Fixed start; `None` draws a lattice point uniformly from
    /// `B_M(N c, N delta')` per replicate.
    pub start: Option<Vec<i64>>,
    /// Sample count for `R*` and `L`.
    pub sup_samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitReport {
    pub n: u64,
    pub delta: f64,
    pub delta_prime: f64,
    pub horizon: f64,
    pub reps: usize,
    pub exits: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub eps_prime: f64,
    pub r_star: f64,
    pub lipschitz: f64,
    pub bound: f64,
    /// `ci_low <= bound`.
    pub within: bool,
}

/// Distance budget for the deviation bound given the two radii.
pub fn exit_eps_prime(delta: f64, delta_prime: f64, c1: f64) -> f64 {
    let e = std::f64::consts::E;
    let k = 3.0 - 2.0 / e;
    if delta_prime >= delta / k {
        (delta - delta_prime) / (2.0 * c1)
    } else {
        delta * (1.0 - 1.0 / e) / (k * c1)
    }
}

/// `ceil(rho T) zeta_{N, 1/rho, K}(eps' e^{-L/rho})` with `K` the ball of
/// radius `max(delta, delta0)`.
#[allow(clippy::too_many_arguments)]
pub fn exit_bound(
    cert: &StabilityCertificate,
    n: f64,
    d: usize,
    delta: f64,
    delta_prime: f64,
    horizon: f64,
    r_star: f64,
    lipschitz: f64,
    j_star: f64,
) -> f64 {
    if horizon == 0.0 {
        return 0.0;
    }
    let rho = cert.rho;
    let eps = exit_eps_prime(delta, delta_prime, cert.c1());
    let z = eps * (-lipschitz / rho).exp();
    let per_block = zeta_bound(n, d, 1.0 / rho, r_star, j_star, z);
    ((rho * horizon).ceil() * per_block).min(1.0)
}

pub fn exit_probability(
    model: &Model,
    cert: &StabilityCertificate,
    opts: &ExitOptions,
) -> Result<ExitReport, SimError> {
    if !(opts.delta_prime >= 0.0 && opts.delta_prime < opts.delta) {
        return Err(SimError::Precondition(format!(
            "need 0 <= delta' < delta, got delta' = {}, delta = {}",
            opts.delta_prime, opts.delta
        )));
    }
    if opts.reps == 0 {
        return Err(SimError::Precondition("reps must be at least 1".into()));
    }
    let sim = SimOptions::new(opts.n, opts.seed, opts.horizon);
    let outer = Restriction::new(cert, opts.delta, opts.n);
    let inner = Restriction::new(cert, opts.delta_prime, opts.n);
    if let Some(x0) = &opts.start {
        sim.validate(model, x0)?;
        if !inner.contains(x0) {
            return Err(SimError::Precondition(format!("start {x0:?} lies outside B(c, delta')")));
        }
    }
    let d = model.dim();
    let nf = opts.n as f64;
    let exited: Vec<bool> = (0..opts.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<bool, SimError> {
            let x0 = match &opts.start {
                Some(x) => x.clone(),
                None => draw_start(model, cert, &inner, opts, rep)?,
            };
            sim.validate(model, &x0)?;
            let mut rng = stream_rng(opts.seed, stream::SSA, rep);
            let mut stepper = Stepper::new(model, opts.n, None);
            let mut x = x0;
            let mut t = 0.0;
            loop {
                match stepper.next_event(&x, t, opts.horizon, &mut rng)? {
                    Event::Jump { time, jump } => {
                        stepper.apply(&mut x, jump)?;
                        t = time;
                        if !outer.contains(&x) {
                            return Ok(true);
                        }
                    }
                    Event::Horizon | Event::Absorbed => return Ok(false),
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let exits = exited.iter().filter(|&&e| e).count();
    let (ci_low, ci_high) = wilson_interval(exits, opts.reps, Z99);
    let k_radius = opts.delta.max(cert.delta0);
    let (r_star, lipschitz) = ball_suprema(model, cert, k_radius, opts.sup_samples, opts.seed)?;
    let j_star = (0..model.num_jumps())
        .map(|k| model.jump_f64(k).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let bound = exit_bound(
        cert, nf, d, opts.delta, opts.delta_prime, opts.horizon, r_star, lipschitz, j_star,
    );
    Ok(ExitReport {
        n: opts.n,
        delta: opts.delta,
        delta_prime: opts.delta_prime,
        horizon: opts.horizon,
        reps: opts.reps,
        exits,
        p_hat: exits as f64 / opts.reps as f64,
        ci_low,
        ci_high,
        eps_prime: exit_eps_prime(opts.delta, opts.delta_prime, cert.c1()),
        r_star,
        lipschitz,
        bound,
        within: ci_low <= bound,
    })
}

fn draw_start(
    model: &Model,
    cert: &StabilityCertificate,
    inner: &Restriction,
    opts: &ExitOptions,
    rep: u64,
) -> Result<Vec<i64>, SimError> {
    let nf = opts.n as f64;
    let mut rng = stream_rng(opts.seed, stream::START_POINTS, rep);
    for _ in 0..10_000 {
        let y = cert
            .metric
            .sample_ball(&mut rng, &cert.c, opts.delta_prime, false);
        // Jitter by up to half a lattice cell so small balls still hit
        // lattice points other than the rounded centre.
        let x: Vec<i64> = y
            .iter()
            .map(|v| (v * nf + rng.random::<f64>() - 0.5).round() as i64)
            .collect();
        if inner.contains(&x) && model.domain().contains_lattice(&x, nf) {
            return Ok(x);
        }
    }
    Err(SimError::Precondition(format!(
        "no lattice point found in B(c, {}) at N = {}",
        opts.delta_prime, opts.n
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{certify, CertifyOptions};
    use crate::model::builtin_hamer_sir;

    fn setup() -> (Model, StabilityCertificate) {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(
            &m,
            &[1.0, 1.0],
            CertifyOptions {
                rho_fraction: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        (m, cert)
    }

    #[test]
    fn eps_prime_branches_agree_at_the_switch() {
        let k = 3.0 - 2.0 / std::f64::consts::E;
        let delta = 1.0;
        let at = exit_eps_prime(delta, delta / k, 2.0);
        let below = exit_eps_prime(delta, delta / k - 1e-12, 2.0);
        assert!((at - below).abs() < 1e-10);
        assert_eq!(exit_eps_prime(1.0, 0.5, 1.0), 0.25);
    }

    #[test]
    fn zero_horizon_gives_zero() {
        let (m, cert) = setup();
        let opts = ExitOptions {
            n: 200,
            seed: 1,
            delta: 0.3,
            delta_prime: 0.1,
            horizon: 0.0,
            reps: 100,
            start: None,
            sup_samples: 200,
        };
        let r = exit_probability(&m, &cert, &opts).unwrap();
        assert_eq!(r.exits, 0);
        assert_eq!(r.bound, 0.0);
        assert!(r.within);
    }

    #[test]
    fn large_ball_is_rarely_left() {
        let (m, cert) = setup();
        let opts = ExitOptions {
            n: 400,
            seed: 2,
            delta: 0.3,
            delta_prime: 0.05,
            horizon: 2.0,
            reps: 400,
            start: None,
            sup_samples: 500,
        };
        let r = exit_probability(&m, &cert, &opts).unwrap();
        assert!(r.p_hat < 0.05, "{r:?}");
        assert!(r.within);
    }

    #[test]
    fn suprema_are_attained_at_the_centre_for_zero_radius() {
        let (m, cert) = setup();
        let (r, l) = ball_suprema(&m, &cert, 0.0, 10, 1).unwrap();
        // Total rate at c = (0.5, 1): 2 * 0.5 + 1 + 1 = 3; |A|_2 for
        // A = [[-2, -1], [2, 0]] is sqrt(4.5 + sqrt(16.25)).
        assert!((r - 3.0).abs() < 1e-12);
        let want = (4.5 + 16.25f64.sqrt()).sqrt();
        assert!((l - want).abs() < 1e-9, "{l} vs {want}");
    }
}
