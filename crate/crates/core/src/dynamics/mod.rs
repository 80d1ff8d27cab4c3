//! Deterministic analysis of the drift ODE `dy/dt = F(y)`: fixed point,
//! spectrum, a contractive quadratic metric and its certified radius.

mod cutoff;
mod drift;
mod ode;

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::{Model, ModelError};
use crate::rng::{stream, stream_rng};

pub use cutoff::{cutoff_time, cutoff_time_with, CutoffOptions};
pub use drift::{check_drift_condition, generator_drift, DriftReport};
pub use ode::{default_step, find_fixed_point, integrate_ode, rk4_step, FlowResult, Termination};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("Newton iteration did not converge in {iterations} steps (|F| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Jacobian is singular at {point:?}")]
    SingularJacobian { point: Vec<f64> },
    #[error("fixed point is not attracting: largest eigenvalue real part is {abscissa}")]
    NotHurwitz { abscissa: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("no radius on the grid passes the certificate checks")]
    NoRadius,
    #[error("trajectory did not reach M-distance {level} of the fixed point by t = {horizon}")]
    HorizonExceeded { level: f64, horizon: f64 },
}

/// Quadratic norm `|x|_M = sqrt(x' M x)` with its equivalence constants
/// `c0 |x| <= |x|_M <= c1 |x|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    m: DMatrix<f64>,
    inv: DMatrix<f64>,
    /// `L^{-T}` for `M = L L'`; maps the Euclidean unit ball onto the
    /// `M` unit ball.
    ball_map: DMatrix<f64>,
    c0: f64,
    c1: f64,
}

impl Metric {
    pub fn new(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        let d = m.nrows();
        if m.ncols() != d || d == 0 {
            return Err(LinalgError::Shape);
        }
        let m = linalg::symmetrize(&m);
        let (lo, hi) = linalg::symmetric_extremes(&m);
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let chol = m.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
        let linv = chol
            .l()
            .try_inverse()
            .ok_or(LinalgError::NotPositiveDefinite)?;
        let inv = chol.inverse();
        Ok(Metric {
            ball_map: linv.transpose(),
            inv,
            m,
            c0: lo.sqrt(),
            c1: hi.sqrt(),
        })
    }

    pub fn identity(d: usize) -> Self {
        Metric::new(DMatrix::identity(d, d)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    #[inline]
    pub fn norm(&self, x: &[f64]) -> f64 {
        linalg::quad_norm(&self.m, x)
    }

    /// `|a - b|_M`.
    #[inline]
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = a.len();
        let mut s = 0.0;
        for k in 0..d {
            let dk = a[k] - b[k];
            let mut row = 0.0;
            for i in 0..d {
                row += (a[i] - b[i]) * self.m[(i, k)];
            }
            s += row * dk;
        }
        s.max(0.0).sqrt()
    }

    /// `<x, y>_M`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = x.len();
        let mut s = 0.0;
        for i in 0..d {
            for k in 0..d {
                s += x[i] * self.m[(i, k)] * y[k];
            }
        }
        s
    }

    /// `max { a . y : |y|_M <= 1 } = sqrt(a' M^-1 a)`.
    pub fn dual_norm(&self, a: &[f64]) -> f64 {
        linalg::quad_norm(&self.inv, a)
    }

    /// Image of a Euclidean vector `u` under the map that sends the unit
    /// ball onto the `M` unit ball.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        (0..d)
            .map(|i| (0..d).map(|k| self.ball_map[(i, k)] * u[k]).sum())
            .collect()
    }

    /// Point drawn uniformly from `B_M(centre, radius)`, or from its
    /// boundary sphere when `surface` is set.
    pub fn sample_ball<R: Rng>(
        &self,
        rng: &mut R,
        centre: &[f64],
        radius: f64,
        surface: bool,
    ) -> Vec<f64> {
        let u = unit_ball_sample(rng, self.dim(), surface);
        let v = self.from_unit(&u);
        centre.iter().zip(v).map(|(c, v)| c + radius * v).collect()
    }
}

/// Uniform point of the Euclidean unit ball (or sphere).
pub fn unit_ball_sample<R: Rng>(rng: &mut R, d: usize, surface: bool) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-300 {
            let r = if surface {
                1.0
            } else {
                rng.random::<f64>().powf(1.0 / d as f64)
            };
            return g.into_iter().map(|v| v / n * r).collect();
        }
    }
}

/// Solve `(A + rho I)' M + M (A + rho I) = -I`, the metric in which
/// `<x, A x>_M <= -rho |x|_M^2`.
pub fn construct_m(a: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>, DynamicsError> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(LinalgError::Shape.into());
    }
    let abscissa = linalg::spectral_abscissa(a);
    if !(abscissa < -rho) {
        return Err(DynamicsError::Precondition(format!(
            "largest eigenvalue real part {abscissa} is not below -rho = {}",
            -rho
        )));
    }
    let shifted_t = (a + DMatrix::identity(d, d) * rho).transpose();
    let m = linalg::solve_lyapunov(&shifted_t, &DMatrix::identity(d, d))?;
    Ok(linalg::symmetrize(&m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// `rho = rho_fraction * rho_hat`.
    pub rho_fraction: f64,
    /// Sample points per candidate radius (half on the boundary sphere).
    pub samples: usize,
    /// Ratio between consecutive candidate radii.
    pub grid_ratio: f64,
    /// Number of candidate radii.
    pub grid_steps: usize,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            rho_fraction: 0.9,
            samples: 2000,
            grid_ratio: 0.95,
            grid_steps: 600,
            seed: 0,
        }
    }
}

/// Contraction geometry around an attracting fixed point.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub c: Vec<f64>,
    pub a: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub rho_hat: f64,
    pub rho: f64,
    /// Midpoint of `(rho, rho_hat)`; the metric contracts at this rate.
    pub rho_prime: f64,
    pub metric: Metric,
    pub delta0: f64,
    /// Linearisation slack: `eps * sum_J |J|_M = (rho_prime - rho) / 2`.
    pub eps: f64,
    /// `max_J |J|_M`.
    pub jstar_m: f64,
    pub options: CertifyOptions,
}

impl StabilityCertificate {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn c0(&self) -> f64 {
        self.metric.c0()
    }

    pub fn c1(&self) -> f64 {
        self.metric.c1()
    }

    pub fn m_norm(&self, x: &[f64]) -> f64 {
        self.metric.norm(x)
    }

    /// `|y - c|_M`.
    pub fn distance_to_centre(&self, y: &[f64]) -> f64 {
        self.metric.dist(y, &self.c)
    }

    pub fn to_report(&self) -> CertificateReport {
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        CertificateReport {
            c: self.c.clone(),
            a: rows(&self.a),
            eigenvalues: self.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            rho_hat: self.rho_hat,
            rho: self.rho,
            rho_prime: self.rho_prime,
            m: rows(self.metric.matrix()),
            delta0: self.delta0,
            c0: self.c0(),
            c1: self.c1(),
            eps: self.eps,
            jstar_m: self.jstar_m,
            options: self.options,
        }
    }

    pub fn from_report(r: &CertificateReport) -> Result<Self, DynamicsError> {
        let d = r.c.len();
        let mat = |rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>, DynamicsError> {
            if rows.len() != d || rows.iter().any(|row| row.len() != d) {
                return Err(LinalgError::Shape.into());
            }
            Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
        };
        Ok(StabilityCertificate {
            c: r.c.clone(),
            a: mat(&r.a)?,
            eigenvalues: r.eigenvalues.iter().map(|z| Complex::new(z[0], z[1])).collect(),
            rho_hat: r.rho_hat,
            rho: r.rho,
            rho_prime: r.rho_prime,
            metric: Metric::new(mat(&r.m)?)?,
            delta0: r.delta0,
            eps: r.eps,
            jstar_m: r.jstar_m,
            options: r.options,
        })
    }

    /// Copy with a different metric, e.g. `M = I` in tests.
    pub fn with_metric(&self, metric: Metric) -> Self {
        StabilityCertificate {
            metric,
            ..self.clone()
        }
    }
}

/// Serializable certificate; matrices row-major at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub rho_hat: f64,
    pub rho: f64,
    pub rho_prime: f64,
    pub m: Vec<Vec<f64>>,
    pub delta0: f64,
    pub c0: f64,
    pub c1: f64,
    pub eps: f64,
    pub jstar_m: f64,
    pub options: CertifyOptions,
}

/// Largest `delta` with `B_M(c, delta)` inside every half-space of the
/// domain; infinite for the whole space.
pub fn inscribed_radius(model: &Model, c: &[f64], metric: &Metric) -> f64 {
    model
        .domain()
        .half_spaces(model.dim())
        .iter()
        .map(|h| {
            let slack = h.bound - h.normal.iter().zip(c).map(|(a, y)| a * y).sum::<f64>();
            slack / metric.dual_norm(&h.normal)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Build the certificate around the fixed point reached from `guess`.
pub fn certify(
    model: &Model,
    guess: &[f64],
    opts: CertifyOptions,
) -> Result<StabilityCertificate, DynamicsError> {
    if !(opts.rho_fraction > 0.0 && opts.rho_fraction < 1.0) {
        return Err(DynamicsError::Precondition(format!(
            "rho_fraction must lie in (0, 1), got {}",
            opts.rho_fraction
        )));
    }
    let c = find_fixed_point(model, guess)?;
    let a = model.eval_jacobian(&c)?;
    let eigenvalues = linalg::eigenvalues(&a);
    let abscissa = eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(DynamicsError::NotHurwitz { abscissa });
    }
    let rho_hat = -abscissa;
    let rho = opts.rho_fraction * rho_hat;
    let rho_prime = 0.5 * (rho + rho_hat);
    let metric = Metric::new(construct_m(&a, rho_prime)?)?;

    let jump_norms: Vec<f64> = (0..model.num_jumps())
        .map(|k| metric.norm(model.jump_f64(k)))
        .collect();
    let jstar_m = jump_norms.iter().copied().fold(0.0, f64::max);
    let eps = 0.5 * (rho_prime - rho) / jump_norms.iter().sum::<f64>();

    let delta0 = certified_radius(model, &c, &metric, eps, opts)?;
    Ok(StabilityCertificate {
        c,
        a,
        eigenvalues,
        rho_hat,
        rho,
        rho_prime,
        metric,
        delta0,
        eps,
        jstar_m,
        options: opts,
    })
}

/// Largest radius on a geometric grid for which the sampled ball satisfies
/// the gradient perturbation bound and strict positivity of every rate.
fn certified_radius(
    model: &Model,
    c: &[f64],
    metric: &Metric,
    eps: f64,
    opts: CertifyOptions,
) -> Result<f64, DynamicsError> {
    let d = model.dim();
    let grad_c = model.rate_gradients(c)?;
    let rates_c = model.eval_rates(c)?;
    if rates_c.iter().any(|&r| r <= 0.0) {
        return Err(DynamicsError::Precondition(
            "every rate must be strictly positive at the fixed point".into(),
        ));
    }
    let bound = eps / metric.c0();

    let mut rng = stream_rng(opts.seed, stream::CERT_SAMPLING, 0);
    let units: Vec<Vec<f64>> = (0..opts.samples.max(2))
        .map(|i| metric.from_unit(&unit_ball_sample(&mut rng, d, i % 2 == 0)))
        .collect();

    let inscribed = inscribed_radius(model, c, metric);
    let top = if inscribed.is_finite() {
        inscribed
    } else {
        10.0 * metric.c1() * (1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    };

    let passes = |delta: f64| -> bool {
        if delta > inscribed {
            return false;
        }
        units.iter().all(|u| {
            let y: Vec<f64> = c.iter().zip(u).map(|(c, u)| c + delta * u).collect();
            let Ok(rates) = model.eval_rates(&y) else {
                return false;
            };
            if rates.iter().any(|&r| r <= 0.0) {
                return false;
            }
            let Ok(grads) = model.rate_gradients(&y) else {
                return false;
            };
            grads.iter().zip(&grad_c).all(|(g, g0)| {
                let diff: f64 = g.iter().zip(g0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                diff.sqrt() < bound
            })
        })
    };

    let mut delta = top;
    for _ in 0..opts.grid_steps {
        if passes(delta) {
            return Ok(delta);
        }
        delta *= opts.grid_ratio;
    }
    Err(DynamicsError::NoRadius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_hamer_sir, parse_model};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sir_a() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, 2.0, 0.0])
    }

    fn contraction_slack(a: &DMatrix<f64>, m: &DMatrix<f64>, rho: f64, seed: u64) -> f64 {
        let d = a.nrows();
        let metric = Metric::new(m.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..1000 {
            let x = unit_ball_sample(&mut rng, d, true);
            let ax: Vec<f64> = (0..d).map(|i| (0..d).map(|k| a[(i, k)] * x[k]).sum()).collect();
            let s = metric.inner(&x, &ax) + rho * metric.norm(&x).powi(2);
            worst = worst.max(s);
        }
        worst
    }

    #[test]
    fn metric_for_minus_identity_is_identity() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let m = construct_m(&a, 0.5).unwrap();
        assert_relative_eq!(m, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn metric_for_sir_solves_shifted_equation() {
        let a = sir_a();
        let m = construct_m(&a, 0.5).unwrap();
        let s = &a + DMatrix::identity(2, 2) * 0.5;
        let res = (s.transpose() * &m + &m * &s + DMatrix::identity(2, 2)).amax();
        assert!(res <= 1e-10, "{res}");
        assert!(contraction_slack(&a, &m, 0.5, 1) <= 1e-9);
    }

    #[test]
    fn metric_rejects_insufficient_decay() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 1.0, -1.0, -0.4]);
        assert!(matches!(
            construct_m(&a, 0.5),
            Err(DynamicsError::Precondition(_))
        ));
    }

    #[test]
    fn sir_certificate() {
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
        assert_relative_eq!(cert.c[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(cert.c[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(cert.rho_hat, 1.0, epsilon = 1e-10);
        assert_relative_eq!(cert.rho, 0.5, epsilon = 1e-10);
        assert_relative_eq!(cert.eigenvalues[0].im, 1.0, epsilon = 1e-10);
        let (lo, hi) = linalg::symmetric_extremes(cert.metric.matrix());
        assert_relative_eq!(cert.c0(), lo.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(cert.c1(), hi.sqrt(), epsilon = 1e-14);
        // The infection rate gradient moves by alpha |dy| <= alpha delta / c0,
        // so the certified radius sits just below eps / alpha.
        let analytic = cert.eps / 2.0;
        assert!(cert.delta0 < analytic && cert.delta0 > 0.9 * analytic, "{} vs {analytic}", cert.delta0);
    }

    #[test]
    fn affine_model_radius_is_limited_by_positivity() {
        // Immigration-death: dy/dt = 1 - y, fixed point 1, rates stay
        // positive on (0, inf).
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 1\n(-1) : x1\n").unwrap();
        let cert = certify(&m, &[3.0], CertifyOptions::default()).unwrap();
        let reach = cert.delta0 / cert.c0();
        assert!(reach < 1.0 && reach > 0.9, "{reach}");
    }

    #[test]
    fn report_round_trip_preserves_every_bit() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions::default()).unwrap();
        let json = serde_json::to_string(&cert.to_report()).unwrap();
        let back: CertificateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cert.to_report());
        let cert2 = StabilityCertificate::from_report(&back).unwrap();
        assert_eq!(cert2.metric.matrix(), cert.metric.matrix());
    }

    #[test]
    fn sampled_ball_points_lie_in_the_ball() {
        let metric = Metric::new(construct_m(&sir_a(), 0.5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..500 {
            let y = metric.sample_ball(&mut rng, &[1.0, 2.0], 0.3, i % 2 == 0);
            let r = metric.dist(&y, &[1.0, 2.0]);
            assert!(r <= 0.3 + 1e-12);
            if i % 2 == 0 {
                assert_relative_eq!(r, 0.3, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn norm_equivalence_on_random_vectors() {
        let metric = Metric::new(construct_m(&sir_a(), 0.9).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let e = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let n = metric.norm(&x);
            assert!(metric.c0() * e <= n * (1.0 + 1e-12));
            assert!(n <= metric.c1() * e * (1.0 + 1e-12));
        }
    }

    proptest::proptest! {
        #[test]
        fn construct_m_contracts_random_hurwitz(seed in 0u64..10_000, d in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
            let shift = linalg::spectral_abscissa(&b) + rng.random_range(0.2..2.0);
            let a = b - DMatrix::identity(d, d) * shift;
            let rho = 0.9 * -linalg::spectral_abscissa(&a);
            let m = construct_m(&a, rho).unwrap();
            proptest::prop_assert!(contraction_slack(&a, &m, rho, seed) <= 1e-9);
        }
    }
}
