//! Exact stochastic simulation of the jump process (direct-method SSA),
//! optionally restricted to an `M`-ball around `N c`.

mod coupling;
mod exit;
mod martingale;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{Metric, StabilityCertificate};
use crate::equilibrium::LatticeDistribution;
use crate::model::{Model, ModelError};
use crate::rng::{exp1, stream, stream_rng};

pub use coupling::{
    coupling_experiment, coupling_generator, least_squares_slope, scan_k2, simulate_coupled,
    CoupledRecord, CoupledTrace, CouplingConfig, CouplingExperiment, CouplingRow, K2Scan, Phase,
};
pub use exit::{ball_suprema, exit_bound, exit_eps_prime, exit_probability, ExitOptions, ExitReport};
pub use martingale::{martingale_deviation, zeta_bound, MartingaleReport, MartingaleRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Relative tolerance on the ball boundary so that lattice points lying
/// exactly on the sphere are classified the same way everywhere.
const BALL_TOL: f64 = 1e-12;

/// The lattice ball `B_M(N c, N delta)`.
#[derive(Debug, Clone)]
pub struct Restriction {
    centre: Vec<f64>,
    metric: Metric,
    radius: f64,
    delta: f64,
}

impl Restriction {
    pub fn new(cert: &StabilityCertificate, delta: f64, n: u64) -> Self {
        Self::with_metric(&cert.c, cert.metric.clone(), delta, n)
    }

    pub fn with_metric(c: &[f64], metric: Metric, delta: f64, n: u64) -> Self {
        let nf = n as f64;
        Restriction {
            centre: c.iter().map(|v| v * nf).collect(),
            metric,
            radius: delta * nf,
            delta,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `N c`.
    pub fn centre(&self) -> &[f64] {
        &self.centre
    }

    /// `N delta`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// `|X - N c|_M`.
    #[inline]
    pub fn distance(&self, x: &[i64]) -> f64 {
        let d = x.len();
        let mut s = 0.0;
        let m = self.metric.matrix();
        for k in 0..d {
            let dk = x[k] as f64 - self.centre[k];
            let mut row = 0.0;
            for i in 0..d {
                row += (x[i] as f64 - self.centre[i]) * m[(i, k)];
            }
            s += row * dk;
        }
        s.max(0.0).sqrt()
    }

    #[inline]
    pub fn contains(&self, x: &[i64]) -> bool {
        self.distance(x) <= self.radius * (1.0 + BALL_TOL)
    }
}

/// Absolute counts and time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainState {
    pub x: Vec<i64>,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub n: u64,
    pub seed: u64,
    pub horizon: f64,
    pub restriction: Option<Restriction>,
    /// Sorted observation times in `[0, horizon]`; empty records every
    /// event.
    pub record: Vec<f64>,
}

impl SimOptions {
    pub fn new(n: u64, seed: u64, horizon: f64) -> Self {
        SimOptions {
            n,
            seed,
            horizon,
            restriction: None,
            record: Vec::new(),
        }
    }

    pub fn restricted(mut self, r: Restriction) -> Self {
        self.restriction = Some(r);
        self
    }

    pub fn recording(mut self, times: Vec<f64>) -> Self {
        self.record = times;
        self
    }

    fn validate(&self, model: &Model, x0: &[i64]) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Precondition("N must be positive".into()));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Precondition(format!(
                "horizon must be finite and non-negative, got {}",
                self.horizon
            )));
        }
        if self.record.windows(2).any(|w| w[0] > w[1])
            || self.record.iter().any(|&t| !(0.0..=self.horizon).contains(&t))
        {
            return Err(SimError::Precondition(
                "observation times must be sorted and lie within [0, horizon]".into(),
            ));
        }
        if x0.len() != model.dim() {
            return Err(SimError::Precondition(format!(
                "initial state has {} coordinates, model dimension is {}",
                x0.len(),
                model.dim()
            )));
        }
        if !model.domain().contains_lattice(x0, self.n as f64) {
            return Err(ModelError::OutsideDomain {
                point: x0.iter().map(|&v| v as f64 / self.n as f64).collect(),
            }
            .into());
        }
        if let Some(r) = &self.restriction {
            if !r.contains(x0) {
                return Err(SimError::Precondition(format!(
                    "initial state {x0:?} lies outside the restriction ball"
                )));
            }
        }
        Ok(())
    }
}

/// One SSA path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Observed states; right-continuous, so a jump exactly at an
    /// observation time is included.
    pub records: Vec<ChainState>,
    pub end: ChainState,
    pub events: u64,
    /// Total rate hit zero before the horizon; the state was held.
    pub absorbed: bool,
}

pub(crate) enum Event {
    Jump { time: f64, jump: usize },
    Horizon,
    Absorbed,
}

/// Rate evaluation and event selection for one chain.
pub(crate) struct Stepper<'a> {
    model: &'a Model,
    n: f64,
    restriction: Option<&'a Restriction>,
    /// `N r_J(X / N)`, zeroed for jumps the restriction forbids.
    pub(crate) rates: Vec<f64>,
    y: Vec<f64>,
    cand: Vec<i64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a Model, n: u64, restriction: Option<&'a Restriction>) -> Self {
        Stepper {
            model,
            n: n as f64,
            restriction,
            rates: vec![0.0; model.num_jumps()],
            y: vec![0.0; model.dim()],
            cand: vec![0; model.dim()],
        }
    }

    /// Fill `rates` for state `x`; returns the total.
    #[inline]
    pub(crate) fn fill_rates(&mut self, x: &[i64]) -> Result<f64, SimError> {
        for (y, &v) in self.y.iter_mut().zip(x) {
            *y = v as f64 / self.n;
        }
        self.model.rates_into(&self.y, &mut self.rates)?;
        let mut total = 0.0;
        for k in 0..self.rates.len() {
            if self.rates[k] == 0.0 {
                continue;
            }
            if let Some(r) = self.restriction {
                let j = self.model.jumps()[k].vector.entries();
                for i in 0..x.len() {
                    self.cand[i] = x[i] + j[i];
                }
                if !r.contains(&self.cand) {
                    self.rates[k] = 0.0;
                    continue;
                }
            }
            self.rates[k] *= self.n;
            total += self.rates[k];
        }
        Ok(total)
    }

    #[inline]
    pub(crate) fn pick<R: Rng>(&self, rng: &mut R, total: f64) -> usize {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &r) in self.rates.iter().enumerate() {
            if r > 0.0 {
                acc += r;
                last = k;
                if target < acc {
                    return k;
                }
            }
        }
        last
    }

    #[inline]
    pub(crate) fn next_event<R: Rng>(
        &mut self,
        x: &[i64],
        t: f64,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Event, SimError> {
        let total = self.fill_rates(x)?;
        if total <= 0.0 {
            return Ok(Event::Absorbed);
        }
        let time = t + exp1(rng) / total;
        if time > horizon {
            return Ok(Event::Horizon);
        }
        let jump = self.pick(rng, total);
        Ok(Event::Jump { time, jump })
    }

    /// Apply jump `k`; a free chain that steps outside the domain means the
    /// model has a positive rate pointing out of it.
    #[inline]
    pub(crate) fn apply(&self, x: &mut [i64], k: usize) -> Result<(), SimError> {
        let j = self.model.jumps()[k].vector.entries();
        for (xi, ji) in x.iter_mut().zip(j) {
            *xi += ji;
        }
        if !self.model.domain().contains_lattice(x, self.n) {
            return Err(ModelError::OutsideDomain {
                point: x.iter().map(|&v| v as f64 / self.n).collect(),
            }
            .into());
        }
        Ok(())
    }
}

/// Gillespie direct-method path from `X0` using replicate stream `rep`.
pub fn simulate_path_replicate(
    model: &Model,
    opts: &SimOptions,
    x0: &[i64],
    rep: u64,
) -> Result<Trajectory, SimError> {
    opts.validate(model, x0)?;
    let mut rng = stream_rng(opts.seed, stream::SSA, rep);
    let mut stepper = Stepper::new(model, opts.n, opts.restriction.as_ref());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut events = 0u64;
    let every = opts.record.is_empty();
    let mut records = Vec::with_capacity(if every { 64 } else { opts.record.len() });
    if every {
        records.push(ChainState { x: x.clone(), t: 0.0 });
    }
    let mut next_rec = 0;
    let absorbed = loop {
        match stepper.next_event(&x, t, opts.horizon, &mut rng)? {
            Event::Jump { time, jump } => {
                while next_rec < opts.record.len() && opts.record[next_rec] < time {
                    records.push(ChainState {
                        x: x.clone(),
                        t: opts.record[next_rec],
                    });
                    next_rec += 1;
                }
                stepper.apply(&mut x, jump)?;
                t = time;
                events += 1;
                if every {
                    records.push(ChainState { x: x.clone(), t });
                }
            }
            Event::Horizon => break false,
            Event::Absorbed => break true,
        }
    };
    for &r in &opts.record[next_rec..] {
        records.push(ChainState { x: x.clone(), t: r });
    }
    Ok(Trajectory {
        records,
        end: ChainState {
            x,
            t: opts.horizon,
        },
        events,
        absorbed,
    })
}

/// Replicate 0 of [`simulate_path_replicate`].
pub fn simulate_path(model: &Model, opts: &SimOptions, x0: &[i64]) -> Result<Trajectory, SimError> {
    simulate_path_replicate(model, opts, x0, 0)
}

/// States at each of `times` for `reps` independent replicates, indexed
/// `[time][replicate]`. Replicate `r` always uses stream `r`.
pub fn sample_paths(
    model: &Model,
    opts: &SimOptions,
    x0: &[i64],
    times: &[f64],
    reps: usize,
) -> Result<Vec<Vec<Vec<i64>>>, SimError> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let o = SimOptions {
        horizon,
        record: times.to_vec(),
        ..opts.clone()
    };
    let per_rep: Vec<Vec<Vec<i64>>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            simulate_path_replicate(model, &o, x0, r)
                .map(|tr| tr.records.into_iter().map(|s| s.x).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok((0..times.len())
        .map(|i| per_rep.iter().map(|p| p[i].clone()).collect())
        .collect())
}

/// Empirical law of `X(t)` from `reps` replicates.
pub fn sample_at(
    model: &Model,
    opts: &SimOptions,
    x0: &[i64],
    t: f64,
    reps: usize,
) -> Result<LatticeDistribution, SimError> {
    if reps == 0 {
        return Err(SimError::Precondition("reps must be at least 1".into()));
    }
    let states = sample_paths(model, opts, x0, &[t], reps)?;
    Ok(LatticeDistribution::empirical(&states[0]))
}
