//! Quasi-equilibrium of the restricted chain, Gaussian comparison laws and
//! the Monte Carlo checks built on them.

mod distribution;
mod profile;
mod stationary;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dynamics::{DynamicsError, Metric};
use crate::linalg::{self, LinalgError};
use crate::model::{Model, ModelError};
use crate::simulate::{Restriction, SimError};

pub use distribution::{count_states, LatticeDistribution};
pub use profile::{
    cutoff_profile, first_crossing, mean_drift_check, transition_width, variance_check, CutoffProfile,
    MeanDriftReport, ProfileOptions, ProfileRow, VarianceReport,
};
pub use stationary::{
    stationary_direct, stationary_empirical, stationary_exact, stationary_power, RestrictedChain,
    StationaryOptions, StationarySolution,
};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("ball holds more than {cap} lattice states (estimate {estimate:.0})")]
    CapExceeded { cap: usize, estimate: f64 },
    #[error("no lattice state in the ball")]
    Empty,
    #[error("restricted chain has {closed} closed classes; it must have exactly one")]
    Reducible { closed: usize },
    #[error("power iteration stopped after {iterations} steps at residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotHurwitz { abscissa: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Default state cap for exact solves.
pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Every lattice point of the ball, in lexicographic order. The last
/// coordinate is solved for exactly; the others scan the ellipsoid's
/// bounding box. Membership uses [`Restriction::contains`] so the result
/// agrees with the restricted simulator.
pub fn enumerate_ball(ball: &Restriction, cap: usize) -> Result<Vec<Vec<i64>>, EquilibriumError> {
    let metric = ball.metric();
    let d = metric.dim();
    let r = ball.radius();
    let centre = ball.centre();
    let inv = metric.inverse();
    let det = metric.matrix().determinant();
    let unit_volume = std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half_plus_one(d);
    let estimate = unit_volume * r.powi(d as i32) / det.sqrt();
    if estimate > 1.5 * cap as f64 + 100.0 {
        return Err(EquilibriumError::CapExceeded { cap, estimate });
    }
    let lo: Vec<i64> = (0..d)
        .map(|i| (centre[i] - r * inv[(i, i)].sqrt()).floor() as i64 - 1)
        .collect();
    let hi: Vec<i64> = (0..d)
        .map(|i| (centre[i] + r * inv[(i, i)].sqrt()).ceil() as i64 + 1)
        .collect();
    let m = metric.matrix();
    let last = d - 1;
    let mut out = Vec::new();
    let mut x = lo.clone();
    loop {
        // Quadratic in t = x_d - centre_d with the leading coordinates fixed.
        let v: Vec<f64> = (0..last).map(|i| x[i] as f64 - centre[i]).collect();
        let a = m[(last, last)];
        let b: f64 = (0..last).map(|i| m[(i, last)] * v[i]).sum();
        let c: f64 = (0..last)
            .map(|i| (0..last).map(|k| v[i] * m[(i, k)] * v[k]).sum::<f64>())
            .sum::<f64>()
            - r * r;
        let disc = b * b - a * c;
        if disc >= -1e-9 * r * r * a {
            let s = disc.max(0.0).sqrt();
            let t_lo = (-b - s) / a + centre[last];
            let t_hi = (-b + s) / a + centre[last];
            for xl in (t_lo.floor() as i64 - 1)..=(t_hi.ceil() as i64 + 1) {
                x[last] = xl;
                if ball.contains(&x) {
                    if out.len() >= cap {
                        return Err(EquilibriumError::CapExceeded { cap, estimate });
                    }
                    out.push(x.clone());
                }
            }
        }
        // Advance the odometer over the leading coordinates.
        let mut i = last;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            x[i] += 1;
            if x[i] <= hi[i] {
                break;
            }
            x[i] = lo[i];
        }
    }
}

/// `Gamma(d/2 + 1)`.
fn gamma_half_plus_one(d: usize) -> f64 {
    // Gamma(1) = 1, Gamma(3/2) = sqrt(pi)/2, Gamma(x + 1) = x Gamma(x).
    let (mut g, mut x) = if d.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt() / 2.0, 1.5)
    };
    while x < d as f64 / 2.0 + 1.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Mass of `pi` outside `B_M(N c, N z)`.
pub fn tail_mass(pi: &LatticeDistribution, centre: &[f64], metric: &Metric, n: u64, z: f64) -> f64 {
    let ball = Restriction::with_metric(centre, metric.clone(), z, n);
    pi.support()
        .iter()
        .zip(pi.mass())
        .filter(|(x, _)| !ball.contains(x))
        .map(|(_, p)| p)
        .sum()
}

/// `sigma^2 = sum_J J J' r_J(c)`.
pub fn equilibrium_sigma2(model: &Model, c: &[f64]) -> Result<DMatrix<f64>, ModelError> {
    let d = model.dim();
    let rates = model.eval_rates(c)?;
    let mut s = DMatrix::zeros(d, d);
    for (k, r) in rates.iter().enumerate() {
        let j = model.jump_f64(k);
        for a in 0..d {
            for b in 0..d {
                s[(a, b)] += j[a] * j[b] * r;
            }
        }
    }
    Ok(s)
}

/// Solve `A Sigma + Sigma A' + sigma2 = 0` for Hurwitz `A`.
pub fn solve_lyapunov_sigma(
    a: &DMatrix<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EquilibriumError> {
    if a.nrows() != a.ncols() || sigma2.shape() != a.shape() {
        return Err(LinalgError::Shape.into());
    }
    let abscissa = linalg::spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(EquilibriumError::NotHurwitz { abscissa });
    }
    let s = linalg::solve_lyapunov(a, sigma2)?;
    Ok(linalg::symmetrize(&s))
}

/// Discrete normal law `DN(N c, N Sigma)` on the lattice points of the box
/// of `sd_box` standard deviations per coordinate around `N c`.
pub fn discrete_normal(
    n: u64,
    c: &[f64],
    sigma: &DMatrix<f64>,
    sd_box: f64,
) -> Result<LatticeDistribution, EquilibriumError> {
    let d = c.len();
    if sigma.shape() != (d, d) {
        return Err(LinalgError::Shape.into());
    }
    let nf = n as f64;
    let cov = sigma * nf;
    let prec = cov
        .clone()
        .cholesky()
        .ok_or(LinalgError::NotPositiveDefinite)?
        .inverse();
    let centre: Vec<f64> = c.iter().map(|v| v * nf).collect();
    let lo: Vec<i64> = (0..d)
        .map(|i| (centre[i] - sd_box * cov[(i, i)].sqrt()).ceil() as i64)
        .collect();
    let hi: Vec<i64> = (0..d)
        .map(|i| (centre[i] + sd_box * cov[(i, i)].sqrt()).floor() as i64)
        .collect();
    let total: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1).max(0) as f64).product();
    if total > 5e7 {
        return Err(EquilibriumError::CapExceeded {
            cap: 50_000_000,
            estimate: total,
        });
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    let mut x = lo.clone();
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Err(EquilibriumError::Empty);
    }
    loop {
        let v: Vec<f64> = (0..d).map(|i| x[i] as f64 - centre[i]).collect();
        let q: f64 = (0..d)
            .map(|i| (0..d).map(|k| v[i] * prec[(i, k)] * v[k]).sum::<f64>())
            .sum();
        let w = (-0.5 * q).exp();
        if w > 0.0 {
            support.push(x.clone());
            weights.push(w);
        }
        let mut i = d;
        loop {
            if i == 0 {
                return LatticeDistribution::new(support, weights);
            }
            i -= 1;
            x[i] += 1;
            if x[i] <= hi[i] {
                break;
            }
            x[i] = lo[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{certify, CertifyOptions};
    use crate::model::{builtin_hamer_sir, parse_model};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_disc_of_radius_two_has_thirteen_points() {
        let ball = Restriction::with_metric(&[0.0, 0.0], Metric::identity(2), 2.0, 1);
        let pts = enumerate_ball(&ball, 1000).unwrap();
        assert_eq!(pts.len(), 13);
        assert!(pts.windows(2).all(|w| w[0] < w[1]));
        assert!(pts.iter().all(|p| p[0] * p[0] + p[1] * p[1] <= 4));
    }

    #[test]
    fn tiny_ball_holds_only_the_nearest_point() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions::default()).unwrap();
        // N c = (50, 100) is a lattice point; any radius below c0 / 2 keeps
        // only it.
        let n = 100;
        let delta = 0.4 * cert.c0() / n as f64;
        let pts = enumerate_ball(&Restriction::new(&cert, delta, n), 10).unwrap();
        assert_eq!(pts, vec![vec![50, 100]]);
    }

    #[test]
    fn count_tracks_ellipse_area() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions { rho_fraction: 0.5, ..Default::default() }).unwrap();
        let n = 200;
        let delta = 0.2;
        let pts = enumerate_ball(&Restriction::new(&cert, delta, n), DEFAULT_STATE_CAP).unwrap();
        let r = n as f64 * delta;
        let area = std::f64::consts::PI * r * r / cert.metric.matrix().determinant().sqrt();
        assert!((pts.len() as f64 / area - 1.0).abs() < 0.05, "{} vs {area}", pts.len());
    }

    #[test]
    fn enumeration_matches_brute_force_in_three_dimensions() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let metric = Metric::new(m).unwrap();
        let ball = Restriction::with_metric(&[0.3, -0.2, 0.7], metric, 4.1, 1);
        let pts = enumerate_ball(&ball, 10_000).unwrap();
        let mut brute = Vec::new();
        for a in -10..=10 {
            for b in -10..=10 {
                for c in -10..=10 {
                    if ball.contains(&[a, b, c]) {
                        brute.push(vec![a, b, c]);
                    }
                }
            }
        }
        assert_eq!(pts, brute);
    }

    #[test]
    fn cap_is_enforced() {
        let ball = Restriction::with_metric(&[0.0, 0.0], Metric::identity(2), 100.0, 1);
        assert!(matches!(enumerate_ball(&ball, 1000), Err(EquilibriumError::CapExceeded { .. })));
    }

    #[test]
    fn sir_sigma2_and_sigma() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let s2 = equilibrium_sigma2(&m, &[0.5, 1.0]).unwrap();
        assert_eq!(s2, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        let a = m.eval_jacobian(&[0.5, 1.0]).unwrap();
        let sigma = solve_lyapunov_sigma(&a, &s2).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.75, -0.5, -0.5, 1.5]);
        assert_abs_diff_eq!(sigma, want, epsilon = 1e-12);
        assert!(linalg::lyapunov_residual(&a, &sigma, &s2) <= 1e-10);
    }

    #[test]
    fn sigma2_special_cases() {
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 3\n(-1) : 3\n").unwrap();
        assert_eq!(equilibrium_sigma2(&m, &[0.0]).unwrap()[(0, 0)], 6.0);
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 0\n").unwrap();
        assert_eq!(equilibrium_sigma2(&m, &[0.0]).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn lyapunov_balance_and_non_hurwitz() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let s = solve_lyapunov_sigma(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert_abs_diff_eq!(s, DMatrix::identity(2, 2), epsilon = 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_lyapunov_sigma(&bad, &DMatrix::identity(2, 2)),
            Err(EquilibriumError::NotHurwitz { .. })
        ));
    }

    #[test]
    fn discrete_normal_ratio_symmetry_and_tail() {
        let dn = discrete_normal(1, &[0.0], &DMatrix::from_element(1, 1, 1.0), 8.0).unwrap();
        let ratio = dn.prob(&[0]) / dn.prob(&[1]);
        assert!((ratio - 0.5f64.exp()).abs() < 1e-12);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.75, -0.5, -0.5, 1.5]);
        let dn = discrete_normal(100, &[0.5, 1.0], &sigma, 8.0).unwrap();
        for v in [[3, -2], [7, 1], [0, 5]] {
            let p = dn.prob(&[50 + v[0], 100 + v[1]]);
            let q = dn.prob(&[50 - v[0], 100 - v[1]]);
            assert!((p - q).abs() <= 1e-15 + 1e-12 * p);
        }
        let six = discrete_normal(100, &[0.5, 1.0], &sigma, 6.0).unwrap();
        let inside: f64 = dn
            .support()
            .iter()
            .zip(dn.mass())
            .filter(|(x, _)| six.prob(x) > 0.0)
            .map(|(_, p)| p)
            .sum();
        assert!(1.0 - inside < 1e-6);
    }

    #[test]
    fn tail_mass_edge_cases() {
        let pi = LatticeDistribution::new(vec![vec![0], vec![1], vec![3]], vec![0.5, 0.3, 0.2]).unwrap();
        let m = Metric::identity(1);
        assert_eq!(tail_mass(&pi, &[0.0], &m, 1, 3.0), 0.0);
        assert!((tail_mass(&pi, &[0.0], &m, 1, 0.0) - 0.5).abs() < 1e-15);
        assert!((tail_mass(&pi, &[0.0], &m, 1, 1.0) - 0.2).abs() < 1e-15);
    }
}
