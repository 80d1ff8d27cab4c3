//! Martingale deviation: `m(t) = x(t) - x(0) - int_0^t F(x(u)) du` with
//! `x = X / N`, stopped on leaving a compact set.

use rayon::prelude::*;
use serde::Serialize;

use super::{Event, Restriction, SimError, SimOptions, Stepper};
use crate::model::Model;
use crate::rng::{stream, stream_rng};
use crate::stats::{wilson_interval, Z99};

/// `2d exp{-(N z / (2 d J*)) min(1, z / (d e T R* J*))}`.
pub fn zeta_bound(n: f64, d: usize, t: f64, r_star: f64, j_star: f64, z: f64) -> f64 {
    let df = d as f64;
    let inner = (z / (df * std::f64::consts::E * t * r_star * j_star)).min(1.0);
    2.0 * df * (-(n * z / (2.0 * df * j_star)) * inner).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleRow {
    pub z: f64,
    pub exceed: usize,
    pub p_hat: f64,
    /// 99% Wilson interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: f64,
    /// `ci_low <= bound`.
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub n: u64,
    pub horizon: f64,
    pub reps: usize,
    pub r_star: f64,
    pub j_star: f64,
    pub rows: Vec<MartingaleRow>,
    /// Componentwise mean of `m(T)` and its standard error.
    pub mean_end: Vec<f64>,
    pub se_end: Vec<f64>,
    /// Fraction of paths stopped on leaving the set.
    pub stopped: f64,
}

struct PathResult {
    sup: f64,
    end: Vec<f64>,
    stopped: bool,
}

/// Run `reps` free paths from `X0` to `opts.horizon`, stopped on leaving
/// the ball `set`, and compare the empirical tail of `sup_t |m(t)|`
/// (Euclidean norm) with `zeta_bound`. `r_star` bounds the total rate on
/// the set.
pub fn martingale_deviation(
    model: &Model,
    opts: &SimOptions,
    set: &Restriction,
    r_star: f64,
    x0: &[i64],
    reps: usize,
    z_grid: &[f64],
) -> Result<MartingaleReport, SimError> {
    let free = SimOptions {
        restriction: None,
        record: Vec::new(),
        ..opts.clone()
    };
    free.validate(model, x0)?;
    if !set.contains(x0) {
        return Err(SimError::Precondition("initial state lies outside the stopping set".into()));
    }
    let d = model.dim();
    let n = opts.n as f64;
    let horizon = opts.horizon;
    let results: Vec<PathResult> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<PathResult, SimError> {
            let mut rng = stream_rng(opts.seed, stream::SSA, rep);
            let mut stepper = Stepper::new(model, opts.n, None);
            let mut x = x0.to_vec();
            let mut t = 0.0;
            // integral of F(x(u)) du so far
            let mut integral = vec![0.0; d];
            let mut drift = vec![0.0; d];
            let mut sup = 0.0f64;
            let m_at = |x: &[i64], integral: &[f64]| -> Vec<f64> {
                (0..d)
                    .map(|i| (x[i] - x0[i]) as f64 / n - integral[i])
                    .collect()
            };
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            loop {
                let ev = stepper.next_event(&x, t, horizon, &mut rng)?;
                // stepper.rates holds N r_J(x) for the current state
                drift.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..model.num_jumps() {
                    let r = stepper.rates[k] / n;
                    for (dv, j) in drift.iter_mut().zip(model.jump_f64(k)) {
                        *dv += j * r;
                    }
                }
                let t_end = match ev {
                    Event::Jump { time, .. } => time,
                    Event::Horizon | Event::Absorbed => horizon,
                };
                for i in 0..d {
                    integral[i] += drift[i] * (t_end - t);
                }
                // m is linear between jumps, so the sup sits at an endpoint.
                sup = sup.max(norm(&m_at(&x, &integral)));
                match ev {
                    Event::Jump { time, jump } => {
                        stepper.apply(&mut x, jump)?;
                        t = time;
                        let m = m_at(&x, &integral);
                        sup = sup.max(norm(&m));
                        if !set.contains(&x) {
                            return Ok(PathResult { sup, end: m, stopped: true });
                        }
                    }
                    Event::Horizon | Event::Absorbed => {
                        return Ok(PathResult {
                            sup,
                            end: m_at(&x, &integral),
                            stopped: false,
                        });
                    }
                }
            }
        })
        .collect::<Result<_, _>>()?;

    let j_star = (0..model.num_jumps())
        .map(|k| model.jump_f64(k).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let rows = z_grid
        .iter()
        .map(|&z| {
            let exceed = results.iter().filter(|r| r.sup >= z).count();
            let (ci_low, ci_high) = wilson_interval(exceed, reps, Z99);
            let bound = zeta_bound(n, d, horizon, r_star, j_star, z);
            MartingaleRow {
                z,
                exceed,
                p_hat: exceed as f64 / reps as f64,
                ci_low,
                ci_high,
                bound,
                within: ci_low <= bound,
            }
        })
        .collect();
    let rf = reps as f64;
    let mean_end: Vec<f64> = (0..d)
        .map(|i| results.iter().map(|r| r.end[i]).sum::<f64>() / rf)
        .collect();
    let se_end = (0..d)
        .map(|i| {
            let var = results.iter().map(|r| (r.end[i] - mean_end[i]).powi(2)).sum::<f64>()
                / (rf - 1.0).max(1.0);
            (var / rf).sqrt()
        })
        .collect();
    Ok(MartingaleReport {
        n: opts.n,
        horizon,
        reps,
        r_star,
        j_star,
        rows,
        mean_end,
        se_end,
        stopped: results.iter().filter(|r| r.stopped).count() as f64 / rf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Metric;
    use crate::model::{builtin_hamer_sir, parse_model};

    #[test]
    fn bound_formula_spot_values() {
        // d = 1, J* = 1, T = 1, R* = 1, z = 1, N = 2:
        // 2 exp{-(2 / 2) min(1, 1 / e)} = 2 exp(-1/e)
        let b = zeta_bound(2.0, 1, 1.0, 1.0, 1.0, 1.0);
        assert!((b - 2.0 * (-1.0 / std::f64::consts::E).exp()).abs() < 1e-15);
        // Large z saturates the minimum at 1.
        let b = zeta_bound(10.0, 2, 1.0, 1.0, 1.0, 100.0);
        assert!((b - 4.0 * (-10.0 * 100.0 / 4.0f64).exp()).abs() < 1e-300);
    }

    #[test]
    fn zero_rate_model_has_zero_martingale() {
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 0\n").unwrap();
        let set = Restriction::with_metric(&[1.0], Metric::identity(1), 1.0, 10);
        let opts = SimOptions::new(10, 1, 2.0);
        let r = martingale_deviation(&m, &opts, &set, 1.0, &[10], 50, &[1e-12]).unwrap();
        assert_eq!(r.rows[0].exceed, 0);
        assert_eq!(r.mean_end, vec![0.0]);
    }

    #[test]
    fn sir_martingale_has_zero_mean_and_respects_bound() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let n = 100;
        let set = Restriction::with_metric(&[0.5, 1.0], Metric::identity(2), 0.45, n);
        let opts = SimOptions::new(n, 4, 2.0);
        let z: Vec<f64> = (1..=6).map(|k| 0.1 * k as f64).collect();
        let r = martingale_deviation(&m, &opts, &set, 6.0, &[50, 100], 4000, &z).unwrap();
        for i in 0..2 {
            assert!(r.mean_end[i].abs() <= 3.0 * r.se_end[i] + 1e-12, "{r:?}");
        }
        assert!(r.rows.iter().all(|row| row.within));
        assert!(r.rows.windows(2).all(|w| w[0].exceed >= w[1].exceed));
    }
}
