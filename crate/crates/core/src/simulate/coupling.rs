//! Markovian coupling of two copies of the chain.
//!
//! Contractive phase: for each jump `J` both copies move together at rate
//! `N min(r_J(u), r_J(v))` and the copy with the larger rate moves alone at
//! rate `N |r_J(u) - r_J(v)|`. Once `H = |U - V|_M <= K3` the copies run
//! independently until they meet (coalesced, identical moves from then on)
//! or drift apart to `H >= nu K3` (back to contractive). Every phase gives
//! each copy the free-chain rates, so both marginals are exact.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Restriction, SimError, SimOptions, Stepper};
use crate::dynamics::{unit_ball_sample, Metric, StabilityCertificate};
use crate::model::{Model, ModelError};
use crate::rng::{exp1, stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Contractive,
    Independent,
    Coalesced,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Contractive => "contractive",
            Phase::Independent => "independent",
            Phase::Coalesced => "coalesced",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingConfig {
    pub k3: f64,
    pub nu_k3: f64,
}

impl CouplingConfig {
    /// `K3 = max(K2, 8 J*_M)`; `nu` from the lattice analysis in the same
    /// metric, at least 1.
    pub fn new(k2: f64, jstar_m: f64, nu: f64) -> Self {
        let k3 = k2.max(8.0 * jstar_m);
        CouplingConfig {
            k3,
            nu_k3: nu.max(1.0) * k3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledRecord {
    pub t: f64,
    pub u: Vec<i64>,
    pub v: Vec<i64>,
    pub phase: Phase,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledTrace {
    pub records: Vec<CoupledRecord>,
    pub coalescence_time: Option<f64>,
    pub events: u64,
}

/// `H(U, V) = |U - V|_M` in lattice units.
fn h_of(metric: &Metric, u: &[i64], v: &[i64]) -> f64 {
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b) as f64).collect();
    metric.norm(&diff)
}

fn phase_for(metric: &Metric, cfg: &CouplingConfig, u: &[i64], v: &[i64], current: Phase) -> Phase {
    if u == v {
        return Phase::Coalesced;
    }
    let h = h_of(metric, u, v);
    match current {
        Phase::Coalesced => Phase::Coalesced,
        Phase::Contractive if h <= cfg.k3 => Phase::Independent,
        Phase::Contractive => Phase::Contractive,
        Phase::Independent if h >= cfg.nu_k3 => Phase::Contractive,
        Phase::Independent => Phase::Independent,
    }
}

/// Simulate the coupled pair from `(U0, V0)` using replicate stream `rep`.
/// `opts.record` lists observation times (empty: every event). Only the
/// free chain is coupled; `opts.restriction` must be unset.
pub fn simulate_coupled(
    model: &Model,
    cert: &StabilityCertificate,
    cfg: &CouplingConfig,
    opts: &SimOptions,
    u0: &[i64],
    v0: &[i64],
    rep: u64,
) -> Result<CoupledTrace, SimError> {
    if opts.restriction.is_some() {
        return Err(SimError::Precondition(
            "the coupling runs the free chain; drop the restriction".into(),
        ));
    }
    opts.validate(model, u0)?;
    opts.validate(model, v0)?;
    let metric = &cert.metric;
    let mut rng = stream_rng(opts.seed, stream::COUPLING, rep);
    let mut su = Stepper::new(model, opts.n, None);
    let mut sv = Stepper::new(model, opts.n, None);
    let mut u = u0.to_vec();
    let mut v = v0.to_vec();
    let initial = if h_of(metric, &u, &v) <= cfg.k3 {
        Phase::Independent
    } else {
        Phase::Contractive
    };
    let mut phase = phase_for(metric, cfg, &u, &v, initial);
    let mut t = 0.0;
    let mut events = 0u64;
    let mut coalescence_time = (phase == Phase::Coalesced).then_some(0.0);
    let every = opts.record.is_empty();
    let mut records = Vec::new();
    let snapshot = |t: f64, u: &[i64], v: &[i64], phase: Phase| CoupledRecord {
        t,
        u: u.to_vec(),
        v: v.to_vec(),
        phase,
        h: h_of(metric, u, v),
    };
    if every {
        records.push(snapshot(0.0, &u, &v, phase));
    }
    let mut next_rec = 0;
    let k = model.num_jumps();
    let mut weights = vec![0.0; k];

    loop {
        let ru_total = su.fill_rates(&u)?;
        let rv_total = if phase == Phase::Coalesced {
            ru_total
        } else {
            sv.fill_rates(&v)?
        };
        let total = match phase {
            Phase::Coalesced => ru_total,
            Phase::Independent => ru_total + rv_total,
            Phase::Contractive => {
                let mut s = 0.0;
                for j in 0..k {
                    weights[j] = su.rates[j].max(sv.rates[j]);
                    s += weights[j];
                }
                s
            }
        };
        if total <= 0.0 {
            break;
        }
        let time = t + exp1(&mut rng) / total;
        if time > opts.horizon {
            break;
        }
        while next_rec < opts.record.len() && opts.record[next_rec] < time {
            records.push(snapshot(opts.record[next_rec], &u, &v, phase));
            next_rec += 1;
        }
        match phase {
            Phase::Coalesced => {
                let j = su.pick(&mut rng, total);
                su.apply(&mut u, j)?;
                v.copy_from_slice(&u);
            }
            Phase::Independent => {
                if rng.random::<f64>() * total < ru_total {
                    let j = su.pick(&mut rng, ru_total);
                    su.apply(&mut u, j)?;
                } else {
                    let j = sv.pick(&mut rng, rv_total);
                    sv.apply(&mut v, j)?;
                }
            }
            Phase::Contractive => {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut j = k - 1;
                for (idx, w) in weights.iter().enumerate() {
                    acc += w;
                    if target < acc && *w > 0.0 {
                        j = idx;
                        break;
                    }
                }
                let (a, b) = (su.rates[j], sv.rates[j]);
                let joint = a.min(b) / a.max(b);
                if rng.random::<f64>() < joint {
                    su.apply(&mut u, j)?;
                    sv.apply(&mut v, j)?;
                } else if a > b {
                    su.apply(&mut u, j)?;
                } else {
                    sv.apply(&mut v, j)?;
                }
            }
        }
        t = time;
        events += 1;
        let next = phase_for(metric, cfg, &u, &v, phase);
        if next == Phase::Coalesced && phase != Phase::Coalesced {
            coalescence_time = Some(t);
        }
        phase = next;
        if every {
            records.push(snapshot(t, &u, &v, phase));
        }
    }
    for &r in &opts.record[next_rec..] {
        records.push(snapshot(r, &u, &v, phase));
    }
    Ok(CoupledTrace {
        records,
        coalescence_time,
        events,
    })
}

/// Contractive-phase generator of `H`:
/// `sum_{J in J1} (|D + J|_M - |D|_M) N (r_J(u) - r_J(v))
///  + sum_{J in J2} (|D - J|_M - |D|_M) N (r_J(v) - r_J(u))`, `D = U - V`.
pub fn coupling_generator(
    model: &Model,
    metric: &Metric,
    u: &[i64],
    v: &[i64],
    n: f64,
) -> Result<f64, ModelError> {
    let yu: Vec<f64> = u.iter().map(|&x| x as f64 / n).collect();
    let yv: Vec<f64> = v.iter().map(|&x| x as f64 / n).collect();
    let ru = model.eval_rates(&yu)?;
    let rv = model.eval_rates(&yv)?;
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a - b) as f64).collect();
    let h = metric.norm(&diff);
    let mut total = 0.0;
    let mut moved = diff.clone();
    for k in 0..model.num_jumps() {
        let j = model.jump_f64(k);
        let sign = if ru[k] >= rv[k] { 1.0 } else { -1.0 };
        for i in 0..diff.len() {
            moved[i] = diff[i] + sign * j[i];
        }
        total += (metric.norm(&moved) - h) * n * (ru[k] - rv[k]).abs();
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct K2Scan {
    /// Smallest `H` threshold above which `A H <= -rho H` held on every
    /// sampled pair (capped).
    pub k2: f64,
    pub capped: bool,
    pub samples: usize,
    pub samples_above: usize,
    pub max_slack_above: f64,
}

/// Scan pairs with both copies in `B_M(N c, N radius)` and `H <= h_max`.
#[allow(clippy::too_many_arguments)]
pub fn scan_k2(
    model: &Model,
    cert: &StabilityCertificate,
    n: u64,
    radius: f64,
    h_max: f64,
    samples: usize,
    cap: f64,
    seed: u64,
) -> Result<K2Scan, ModelError> {
    let d = cert.dim();
    let nf = n as f64;
    let ball = Restriction::new(cert, radius, n);
    let mut rng = stream_rng(seed, stream::COUPLING, u64::MAX);
    let mut rows: Vec<(f64, f64)> = Vec::with_capacity(samples);
    let mut attempts = 0;
    while rows.len() < samples && attempts < 50 * samples.max(1) {
        attempts += 1;
        let pu = cert.metric.sample_ball(&mut rng, &cert.c, radius, false);
        let u: Vec<i64> = pu.iter().map(|y| (y * nf).round() as i64).collect();
        let hs = h_max * rng.random::<f64>();
        let dir = cert.metric.from_unit(&unit_ball_sample(&mut rng, d, true));
        let v: Vec<i64> = u
            .iter()
            .zip(&dir)
            .map(|(&a, w)| a - (hs * w).round() as i64)
            .collect();
        if u == v || !ball.contains(&u) || !ball.contains(&v) {
            continue;
        }
        let yu: Vec<f64> = u.iter().map(|&x| x as f64 / nf).collect();
        let yv: Vec<f64> = v.iter().map(|&x| x as f64 / nf).collect();
        if !model.domain().contains(&yu) || !model.domain().contains(&yv) {
            continue;
        }
        let h = h_of(&cert.metric, &u, &v);
        let g = coupling_generator(model, &cert.metric, &u, &v, nf)?;
        rows.push((h, g + cert.rho * h));
    }
    let failing = rows
        .iter()
        .filter(|r| r.1 > 0.0)
        .map(|r| r.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw = if failing.is_finite() {
        failing
    } else {
        rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min)
    };
    let above: Vec<f64> = rows.iter().filter(|r| r.0 > failing).map(|r| r.1).collect();
    Ok(K2Scan {
        k2: raw.min(cap),
        capped: raw > cap,
        samples: rows.len(),
        samples_above: above.len(),
        max_slack_above: above.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Fractions of pairs in each phase and the mean of `H` at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRow {
    pub t: f64,
    pub mean_h: f64,
    pub contractive: f64,
    pub independent: f64,
    pub coalesced: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingExperiment {
    pub n: u64,
    pub reps: usize,
    pub h0: f64,
    pub k3: f64,
    pub nu_k3: f64,
    pub rows: Vec<CouplingRow>,
    /// Least-squares slope of `ln mean_h` against `t` over rows with
    /// `t <= fit_until` and `mean_h > 0`.
    pub slope: f64,
    pub fit_until: f64,
    /// Fraction coalesced by the horizon.
    pub coalesced_at_horizon: f64,
}

/// Run `reps` coupled pairs from `(U0, V0)` and aggregate at the
/// observation times in `opts.record` (which must be non-empty).
/// Pair `r` uses replicate stream `r`, so the result does not depend on
/// the thread count.
#[allow(clippy::too_many_arguments)]
pub fn coupling_experiment(
    model: &Model,
    cert: &StabilityCertificate,
    cfg: &CouplingConfig,
    opts: &SimOptions,
    u0: &[i64],
    v0: &[i64],
    reps: usize,
    fit_until: f64,
) -> Result<CouplingExperiment, SimError> {
    if reps == 0 || opts.record.is_empty() {
        return Err(SimError::Precondition(
            "need at least one pair and one observation time".into(),
        ));
    }
    let traces: Vec<CoupledTrace> = (0..reps as u64)
        .into_par_iter()
        .map(|r| simulate_coupled(model, cert, cfg, opts, u0, v0, r))
        .collect::<Result<_, _>>()?;
    let r = reps as f64;
    let rows: Vec<CouplingRow> = opts
        .record
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = CouplingRow {
                t,
                mean_h: 0.0,
                contractive: 0.0,
                independent: 0.0,
                coalesced: 0.0,
            };
            for tr in &traces {
                let rec = &tr.records[k];
                row.mean_h += rec.h;
                match rec.phase {
                    Phase::Contractive => row.contractive += 1.0,
                    Phase::Independent => row.independent += 1.0,
                    Phase::Coalesced => row.coalesced += 1.0,
                }
            }
            row.mean_h /= r;
            row.contractive /= r;
            row.independent /= r;
            row.coalesced /= r;
            row
        })
        .collect();
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|row| row.t <= fit_until && row.mean_h > 0.0)
        .map(|row| (row.t, row.mean_h.ln()))
        .collect();
    let slope = least_squares_slope(&fit);
    let coalesced_at_horizon = traces
        .iter()
        .filter(|tr| tr.coalescence_time.is_some_and(|c| c <= opts.horizon))
        .count() as f64
        / r;
    Ok(CouplingExperiment {
        n: opts.n,
        reps,
        h0: h_of(&cert.metric, u0, v0),
        k3: cfg.k3,
        nu_k3: cfg.nu_k3,
        rows,
        slope,
        fit_until,
        coalesced_at_horizon,
    })
}

/// Slope of the least-squares line through `(x, y)`; NaN with fewer than
/// two distinct abscissae.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
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
    fn equal_starts_are_coalesced_forever() {
        let (m, cert) = setup();
        let cfg = CouplingConfig::new(1.0, cert.jstar_m, 2.0);
        let opts = SimOptions::new(100, 1, 3.0);
        let tr = simulate_coupled(&m, &cert, &cfg, &opts, &[50, 100], &[50, 100], 0).unwrap();
        assert_eq!(tr.coalescence_time, Some(0.0));
        assert!(tr.events > 0);
        assert!(tr
            .records
            .iter()
            .all(|r| r.u == r.v && r.h == 0.0 && r.phase == Phase::Coalesced));
    }

    #[test]
    fn coalescence_is_absorbing() {
        let (m, cert) = setup();
        let cfg = CouplingConfig::new(1.0, cert.jstar_m, 2.0);
        let opts = SimOptions::new(100, 2, 10.0);
        for rep in 0..20 {
            let tr = simulate_coupled(&m, &cert, &cfg, &opts, &[40, 110], &[60, 90], rep).unwrap();
            if let Some(tc) = tr.coalescence_time {
                assert!(tr.records.iter().filter(|r| r.t >= tc).all(|r| r.u == r.v));
            }
        }
    }

    #[test]
    fn phase_thresholds_follow_the_rules() {
        let metric = Metric::identity(1);
        let cfg = CouplingConfig { k3: 2.0, nu_k3: 5.0 };
        assert_eq!(phase_for(&metric, &cfg, &[10], &[15], Phase::Contractive), Phase::Contractive);
        assert_eq!(phase_for(&metric, &cfg, &[10], &[12], Phase::Contractive), Phase::Independent);
        assert_eq!(phase_for(&metric, &cfg, &[10], &[14], Phase::Independent), Phase::Independent);
        assert_eq!(phase_for(&metric, &cfg, &[10], &[15], Phase::Independent), Phase::Contractive);
        assert_eq!(phase_for(&metric, &cfg, &[10], &[10], Phase::Independent), Phase::Coalesced);
        let cfg = CouplingConfig::new(3.0, 1.0, 0.5);
        assert_eq!(cfg.k3, 8.0);
        assert_eq!(cfg.nu_k3, 8.0);
    }

    #[test]
    fn generator_equals_event_sum() {
        // Direct enumeration of the coupled transitions that change H.
        let (m, cert) = setup();
        let n = 400.0;
        let (u, v) = ([190i64, 420], [215i64, 395]);
        let g = coupling_generator(&m, &cert.metric, &u, &v, n).unwrap();
        let ru = m.eval_rates(&[u[0] as f64 / n, u[1] as f64 / n]).unwrap();
        let rv = m.eval_rates(&[v[0] as f64 / n, v[1] as f64 / n]).unwrap();
        let h0 = h_of(&cert.metric, &u, &v);
        let mut want = 0.0;
        for (k, jv) in m.jump_vectors().iter().enumerate() {
            let j = jv.entries();
            let u_alone = [u[0] + j[0], u[1] + j[1]];
            let v_alone = [v[0] + j[0], v[1] + j[1]];
            let excess = n * (ru[k] - rv[k]);
            if excess > 0.0 {
                want += (h_of(&cert.metric, &u_alone, &v) - h0) * excess;
            } else {
                want += (h_of(&cert.metric, &u, &v_alone) - h0) * -excess;
            }
        }
        assert!((g - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn k2_scan_finds_a_finite_threshold() {
        let (m, cert) = setup();
        let s = scan_k2(&m, &cert, 400, 0.2, 80.0, 3000, 1e6, 1).unwrap();
        assert!(s.k2.is_finite() && !s.capped);
        assert!(s.samples_above > 0);
        assert!(s.max_slack_above <= 0.0);
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 3.0 - 0.5 * k as f64)).collect();
        assert!((least_squares_slope(&pts) + 0.5).abs() < 1e-12);
        assert!(least_squares_slope(&[(1.0, 2.0)]).is_nan());
    }

    #[test]
    fn experiment_rows_are_fractions() {
        let (m, cert) = setup();
        let cfg = CouplingConfig::new(5.0, cert.jstar_m, 2.0);
        let opts = SimOptions::new(100, 4, 2.0).recording(vec![0.0, 1.0, 2.0]);
        let e = coupling_experiment(&m, &cert, &cfg, &opts, &[60, 100], &[40, 100], 50, 2.0).unwrap();
        assert_eq!(e.rows.len(), 3);
        for row in &e.rows {
            let total = row.contractive + row.independent + row.coalesced;
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!((e.rows[0].mean_h - e.h0).abs() < 1e-12);
        assert!(e.slope.is_finite());
    }
}
