//! Monte Carlo checks against the quasi-equilibrium: the TV profile around
//! the cutoff time, mean drift and variance scaling.

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use super::distribution::tv_sorted;
use super::{count_states, equilibrium_sigma2, solve_lyapunov_sigma, EquilibriumError, LatticeDistribution};
use crate::dynamics::{cutoff_time, default_step, rk4_step, StabilityCertificate};
use crate::model::Model;
use crate::rng::{stream, stream_rng};
use crate::simulate::{sample_paths, SimOptions};

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub n: u64,
    pub seed: u64,
    pub reps: usize,
    pub bootstrap: usize,
    /// Offsets from the cutoff time; must be sorted.
    pub s_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub s: f64,
    /// `max(0, t_N + s)`.
    pub t: f64,
    pub tv: f64,
    /// Percentile bootstrap interval (2.5%, 97.5%).
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap mean minus the plug-in estimate; estimates the upward
    /// bias of plug-in TV.
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CutoffProfile {
    pub n: u64,
    pub x0: Vec<i64>,
    pub t_n: f64,
    pub reps: usize,
    pub seed: u64,
    pub support: usize,
    /// `sqrt(|support(pi)| / reps)`, an upper bound on twice the expected
    /// plug-in TV of an exact sample.
    pub floor: f64,
    /// `1/2 sum sqrt(pi(x)(1 - pi(x)) / reps)`, the Jensen bound on the
    /// same expectation.
    pub jensen_floor: f64,
    pub rows: Vec<ProfileRow>,
}

/// TV between the law of the free chain at `t_N(X0 / N) + s` and `pi`,
/// for each `s`, with `X0 = round(N y0)`.
pub fn cutoff_profile(
    model: &Model,
    cert: &StabilityCertificate,
    y0: &[f64],
    opts: &ProfileOptions,
    pi: &LatticeDistribution,
) -> Result<CutoffProfile, EquilibriumError> {
    if opts.s_grid.is_empty() || opts.s_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(EquilibriumError::Precondition("s grid must be non-empty and sorted".into()));
    }
    if opts.reps == 0 {
        return Err(EquilibriumError::Precondition("reps must be at least 1".into()));
    }
    let nf = opts.n as f64;
    let x0: Vec<i64> = y0.iter().map(|v| (v * nf).round() as i64).collect();
    let start: Vec<f64> = x0.iter().map(|&v| v as f64 / nf).collect();
    let t_n = cutoff_time(model, cert, &start, nf)?;
    let times: Vec<f64> = opts.s_grid.iter().map(|s| (t_n + s).max(0.0)).collect();
    let sim = SimOptions::new(opts.n, opts.seed, 0.0);
    let samples = sample_paths(model, &sim, &x0, &times, opts.reps)?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(row, states)| {
            let (support, counts) = count_states(states);
            let emp = LatticeDistribution::from_counts(support.clone(), &counts);
            let tv = emp.tv_distance(pi);
            let boot = bootstrap_tv(&support, &counts, pi, opts.bootstrap, opts.seed, row as u64);
            let (ci_low, ci_high, bias) = if boot.is_empty() {
                (tv, tv, 0.0)
            } else {
                let mean = boot.iter().sum::<f64>() / boot.len() as f64;
                (quantile(&boot, 0.025), quantile(&boot, 0.975), mean - tv)
            };
            ProfileRow {
                s: opts.s_grid[row],
                t: times[row],
                tv,
                ci_low,
                ci_high,
                bias,
            }
        })
        .collect();
    let r = opts.reps as f64;
    Ok(CutoffProfile {
        n: opts.n,
        x0,
        t_n,
        reps: opts.reps,
        seed: opts.seed,
        support: pi.len(),
        floor: (pi.len() as f64 / r).sqrt(),
        jensen_floor: 0.5 * pi.mass().iter().map(|p| (p * (1.0 - p) / r).sqrt()).sum::<f64>(),
        rows,
    })
}

/// TV to `pi` of `b` multinomial resamples of the counts. Resample `k` of
/// row `row` uses its own stream, so the result is independent of
/// scheduling.
fn bootstrap_tv(
    support: &[Vec<i64>],
    counts: &[u64],
    pi: &LatticeDistribution,
    b: usize,
    seed: u64,
    row: u64,
) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let mut out: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, stream::BOOTSTRAP, (row << 32) | k);
            let mut left = total;
            let mut rest = 1.0;
            let mut mass = Vec::with_capacity(counts.len());
            for &c in counts {
                let p = c as f64 / total as f64;
                let draw = if left == 0 {
                    0
                } else if p >= rest {
                    left
                } else {
                    Binomial::new(left, (p / rest).min(1.0))
                        .expect("probability lies in [0, 1]")
                        .sample(&mut rng)
                };
                left -= draw;
                rest -= p;
                mass.push(draw as f64 / total as f64);
            }
            tv_sorted(support, &mass, pi.support(), pi.mass())
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// First `s` at which `value(row)` falls to `level`, interpolating
/// linearly between grid points.
pub fn first_crossing(rows: &[ProfileRow], level: f64, value: impl Fn(&ProfileRow) -> f64) -> Option<f64> {
    let first = rows.first()?;
    if value(first) <= level {
        return Some(first.s);
    }
    rows.windows(2).find_map(|w| {
        let (a, b) = (value(&w[0]), value(&w[1]));
        (a > level && b <= level).then(|| w[0].s + (a - level) / (a - b) * (w[1].s - w[0].s))
    })
}

/// Width in `s` of the drop of TV from `hi` to `lo`; `None` if either level
/// is never reached on the grid.
pub fn transition_width(rows: &[ProfileRow], hi: f64, lo: f64) -> Option<f64> {
    let a = first_crossing(rows, hi, |r| r.tv)?;
    let b = first_crossing(rows, lo, |r| r.tv)?;
    Some(b - a)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanDriftReport {
    pub n: u64,
    pub reps: usize,
    /// `max_t sqrt(N) |mean x(t) - y(t)|_M`.
    pub statistic: f64,
    pub argmax_time: f64,
    /// `sqrt(N) sqrt(tr(M Cov(x(t))) / reps)` at the maximising time: the
    /// size of pure Monte Carlo error in the statistic.
    pub noise: f64,
    pub per_time: Vec<(f64, f64)>,
}

/// ODE solution from `y0` at each of the sorted `times`.
fn ode_at(model: &Model, y0: &[f64], times: &[f64], h: f64) -> Vec<Vec<f64>> {
    let mut y = y0.to_vec();
    let mut t = 0.0;
    times
        .iter()
        .map(|&target| {
            while t < target {
                let step = h.min(target - t);
                y = rk4_step(model, &y, step);
                t = if target - t <= h { target } else { t + step };
            }
            y.clone()
        })
        .collect()
}

/// Compare the Monte Carlo mean of `x(t) = X(t) / N` from
/// `X0 = round(N y0)` with the ODE from `X0 / N`.
pub fn mean_drift_check(
    model: &Model,
    cert: &StabilityCertificate,
    n: u64,
    y0: &[f64],
    times: &[f64],
    reps: usize,
    seed: u64,
) -> Result<MeanDriftReport, EquilibriumError> {
    if reps < 2 {
        return Err(EquilibriumError::Precondition("reps must be at least 2".into()));
    }
    let nf = n as f64;
    let d = model.dim();
    let x0: Vec<i64> = y0.iter().map(|v| (v * nf).round() as i64).collect();
    let start: Vec<f64> = x0.iter().map(|&v| v as f64 / nf).collect();
    let samples = sample_paths(model, &SimOptions::new(n, seed, 0.0), &x0, times, reps)?;
    let flow = ode_at(model, &start, times, default_step(cert.rho_hat));
    let m = cert.metric.matrix();
    let mut per_time = Vec::with_capacity(times.len());
    let (mut best, mut arg, mut noise) = (0.0f64, 0.0, 0.0);
    for (k, states) in samples.iter().enumerate() {
        let r = reps as f64;
        let mean: Vec<f64> = (0..d)
            .map(|i| states.iter().map(|x| x[i] as f64).sum::<f64>() / r / nf)
            .collect();
        let diff: Vec<f64> = mean.iter().zip(&flow[k]).map(|(a, b)| a - b).collect();
        let stat = nf.sqrt() * cert.metric.norm(&diff);
        per_time.push((times[k], stat));
        if stat > best || k == 0 {
            best = stat;
            arg = times[k];
            let mut tr = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let cov = states
                        .iter()
                        .map(|x| (x[i] as f64 / nf - mean[i]) * (x[j] as f64 / nf - mean[j]))
                        .sum::<f64>()
                        / (r - 1.0);
                    tr += m[(i, j)] * cov;
                }
            }
            noise = nf.sqrt() * (tr.max(0.0) / r).sqrt();
        }
    }
    Ok(MeanDriftReport {
        n,
        reps,
        statistic: best,
        argmax_time: arg,
        noise,
        per_time,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub n: u64,
    pub t: f64,
    pub variance: f64,
    /// M-Lipschitz constant `|u| / c0` of `f(X) = <u, X>`.
    pub lipschitz: f64,
    /// `variance / (N L^2)`.
    pub ratio: f64,
    /// `u' (N Sigma) u` with `Sigma` the equilibrium covariance.
    pub stationary_prediction: f64,
}

/// Sample variance of `<u, X(t)>` from `X0`.
#[allow(clippy::too_many_arguments)]
pub fn variance_check(
    model: &Model,
    cert: &StabilityCertificate,
    n: u64,
    x0: &[i64],
    t: f64,
    reps: usize,
    direction: &[f64],
    seed: u64,
) -> Result<VarianceReport, EquilibriumError> {
    if reps < 2 {
        return Err(EquilibriumError::Precondition("reps must be at least 2".into()));
    }
    let u_norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if direction.len() != model.dim() || !(u_norm > 0.0) {
        return Err(EquilibriumError::Precondition("direction must be a non-zero d-vector".into()));
    }
    let samples = sample_paths(model, &SimOptions::new(n, seed, 0.0), x0, &[t], reps)?;
    let vals: Vec<f64> = samples[0]
        .iter()
        .map(|x| x.iter().zip(direction).map(|(a, b)| *a as f64 * b).sum())
        .collect();
    let r = reps as f64;
    let mean = vals.iter().sum::<f64>() / r;
    let variance = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let lipschitz = u_norm / cert.c0();
    let sigma = solve_lyapunov_sigma(&cert.a, &equilibrium_sigma2(model, &cert.c)?)?;
    let nf = n as f64;
    let mut pred = 0.0;
    for i in 0..direction.len() {
        for j in 0..direction.len() {
            pred += direction[i] * sigma[(i, j)] * direction[j];
        }
    }
    Ok(VarianceReport {
        n,
        t,
        variance,
        lipschitz,
        ratio: variance / (nf * lipschitz * lipschitz),
        stationary_prediction: nf * pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{certify, CertifyOptions};
    use crate::model::{builtin_hamer_sir, parse_model};

    fn row(s: f64, tv: f64) -> ProfileRow {
        ProfileRow { s, t: s, tv, ci_low: tv, ci_high: tv, bias: 0.0 }
    }

    #[test]
    fn crossings_interpolate() {
        let rows = vec![row(-2.0, 1.0), row(-1.0, 0.8), row(0.0, 0.4), row(1.0, 0.0)];
        assert!((first_crossing(&rows, 0.9, |r| r.tv).unwrap() + 1.5).abs() < 1e-12);
        assert!((first_crossing(&rows, 0.1, |r| r.tv).unwrap() - 0.75).abs() < 1e-12);
        assert!((transition_width(&rows, 0.9, 0.1).unwrap() - 2.25).abs() < 1e-12);
        assert!(transition_width(&rows[..2], 0.9, 0.1).is_none());
    }

    #[test]
    fn quantile_endpoints() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&v, 1.0), 3.0);
        assert_eq!(quantile(&v, 0.5), 1.5);
    }

    #[test]
    fn ode_sampling_hits_requested_times() {
        let m = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n").unwrap();
        let ys = ode_at(&m, &[1.0], &[0.0, 0.37, 1.0, 2.5], 0.01);
        for (y, t) in ys.iter().zip([0.0, 0.37, 1.0, 2.5]) {
            assert!((y[0] - f64::exp(-t)).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_death_mean_follows_the_flow() {
        let m = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n").unwrap();
        let cert = certify(&parse_model("dimension = 1\n[jumps]\n(-1) : x1\n(1) : 1\n").unwrap(), &[1.0], CertifyOptions::default()).unwrap();
        let r = mean_drift_check(&m, &cert, 100, &[1.0], &[0.0, 0.5, 1.0], 4000, 3).unwrap();
        assert_eq!(r.per_time[0].1, 0.0);
        // Linear rates: the mean solves the ODE exactly, so only noise is left.
        assert!(r.statistic <= 4.0 * r.noise, "{r:?}");
    }

    #[test]
    fn profile_is_high_early_and_low_late() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions { rho_fraction: 0.5, ..Default::default() }).unwrap();
        let n = 30;
        let ball = crate::simulate::Restriction::new(&cert, 0.7, n);
        let pi = super::super::stationary_exact(&m, &ball, n, &Default::default()).unwrap().pi;
        let opts = ProfileOptions { n, seed: 1, reps: 4000, bootstrap: 100, s_grid: vec![-10.0, 0.0, 8.0] };
        let p = cutoff_profile(&m, &cert, &[1.0, 1.0], &opts, &pi).unwrap();
        assert_eq!(p.rows[0].t, 0.0);
        assert!(p.rows[0].tv > 0.95);
        assert!(p.rows[2].tv < p.floor + 0.1, "{p:?}");
        for r in &p.rows {
            assert!((0.0..=1.0).contains(&r.tv) && r.ci_low <= r.ci_high);
        }
    }

    #[test]
    fn deterministic_model_has_zero_variance() {
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 0\n").unwrap();
        let mc = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n(1) : 1\n").unwrap();
        let cert = certify(&mc, &[1.0], CertifyOptions::default()).unwrap();
        // The zero-rate model has no fixed point; borrow a metric.
        let r = variance_check(&m, &cert, 10, &[10], 1.0, 20, &[1.0], 1).unwrap();
        assert_eq!(r.variance, 0.0);
    }
}
