//! The model-based subcommands.

use nalgebra::DVector;
use serde::Serialize;

use super::output::{coord_names, fmt_f64, OutDir, Provenance};
use super::{
    AnalyzeArgs, CliError, CommonArgs, CoupleArgs, CutoffArgs, EquilibriumArgs, SimulateArgs,
    ValidateArgs,
};
use crate::dynamics::{
    certify, cutoff_time, default_step, inscribed_radius, integrate_ode, CertifyOptions,
    StabilityCertificate,
};
use crate::equilibrium::{
    cutoff_profile, discrete_normal, equilibrium_sigma2, solve_lyapunov_sigma, stationary_empirical,
    stationary_exact, tail_mass, transition_width, EquilibriumError, LatticeDistribution,
    ProfileOptions, StationaryOptions,
};
use crate::linalg;
use crate::model::{classify_jumps, hamer_sir_config, parse_model, Model, Verdict};
use crate::simulate::{
    coupling_experiment, sample_paths, scan_k2, simulate_coupled, simulate_path, CouplingConfig,
    Restriction, SimOptions,
};

/// Breadth-first search radius for the spanning test.
const LATTICE_RADIUS: usize = 8;

struct Loaded {
    text: String,
    model: Model,
}

fn load(common: &CommonArgs) -> Result<Loaded, CliError> {
    let text = match &common.model {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?,
        None => hamer_sir_config(2.0, 1.0, 1.0),
    };
    let model = parse_model(&text)?;
    Ok(Loaded { text, model })
}

fn guess(common: &CommonArgs, model: &Model) -> Result<Vec<f64>, CliError> {
    let g = common.guess.clone().map(|g| g.0).unwrap_or_else(|| vec![1.0; model.dim()]);
    check_dim(&g, model, "--guess")?;
    Ok(g)
}

fn check_dim(v: &[f64], model: &Model, flag: &str) -> Result<(), CliError> {
    if v.len() != model.dim() {
        return Err(CliError::Validation(format!(
            "{flag} has {} coordinates, model dimension is {}",
            v.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn certificate(common: &CommonArgs, model: &Model) -> Result<StabilityCertificate, CliError> {
    Ok(certify(
        model,
        &guess(common, model)?,
        CertifyOptions {
            rho_fraction: common.rho_fraction,
            ..Default::default()
        },
    )?)
}

/// 0.95 of the inscribed radius, or the certified radius when the domain
/// has no boundary.
fn default_delta(model: &Model, cert: &StabilityCertificate) -> f64 {
    let r = inscribed_radius(model, &cert.c, &cert.metric);
    if r.is_finite() {
        0.95 * r
    } else {
        cert.delta0
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::Validation(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn lattice_point(y: &[f64], n: u64) -> Vec<i64> {
    y.iter().map(|v| (v * n as f64).round() as i64).collect()
}

fn obs_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let k = (horizon / dt + 1e-9).floor() as usize;
    (0..=k).map(|i| (i as f64 * dt).min(horizon)).collect()
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Serialize)]
struct ValidateReport {
    pass: bool,
    checks: Vec<Check>,
    verdict: Option<Verdict>,
    fixed_point: Option<Vec<f64>>,
    eigenvalues: Option<Vec<[f64; 2]>>,
    rho_hat: Option<f64>,
    certificate: Option<crate::dynamics::CertificateReport>,
}

/// Newton on the raw drift, ignoring rate signs so that a fixed point with
/// a negative rate can still be located and reported.
fn raw_fixed_point(model: &Model, guess: &[f64]) -> Result<Vec<f64>, String> {
    let d = model.dim();
    let mut y = guess.to_vec();
    let mut f = vec![0.0; d];
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for _ in 0..100 {
        model.drift_unchecked(&y, &mut f);
        if inf(&f) <= 1e-12 {
            return Ok(y);
        }
        let jac = model.eval_jacobian(&y).map_err(|e| e.to_string())?;
        let rhs = DVector::from_iterator(d, f.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| format!("drift Jacobian is singular at {y:?}"))?;
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            if model.domain().contains(&cand) {
                y = cand;
                break;
            }
            scale *= 0.5;
            if scale < 1e-18 {
                return Err(format!("Newton step leaves the domain at {y:?}"));
            }
        }
    }
    model.drift_unchecked(&y, &mut f);
    if inf(&f) <= 1e-12 {
        Ok(y)
    } else {
        Err(format!("no fixed point found from the guess (|F| = {:e})", inf(&f)))
    }
}

pub fn validate(a: &ValidateArgs) -> Result<u8, CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let mut checks = Vec::new();
    let mut report = ValidateReport {
        pass: false,
        checks: Vec::new(),
        verdict: None,
        fixed_point: None,
        eigenvalues: None,
        rho_hat: None,
        certificate: None,
    };

    let lattice = classify_jumps(&model.jump_vectors(), LATTICE_RADIUS);
    match &lattice {
        Ok(l) => {
            let detail = match &l.verdict {
                Verdict::Spanning => "every unit vector is a sum of jumps".to_string(),
                Verdict::Sublattice { basis } => {
                    format!("jumps generate a strict sublattice with basis {basis:?}")
                }
                Verdict::Separated { normal } => {
                    format!("v = {normal:?} has v.J >= 0 for every jump")
                }
            };
            checks.push(Check {
                name: "spanning",
                pass: l.is_spanning(),
                detail,
            });
            report.verdict = Some(l.verdict.clone());
        }
        Err(e) => checks.push(Check {
            name: "spanning",
            pass: false,
            detail: e.to_string(),
        }),
    }

    let g = guess(&a.common, model)?;
    match raw_fixed_point(model, &g) {
        Err(msg) => checks.push(Check {
            name: "fixed-point",
            pass: false,
            detail: msg,
        }),
        Ok(c) => {
            checks.push(Check {
                name: "fixed-point",
                pass: true,
                detail: format!("F(c) = 0 at c = {c:?}"),
            });
            match model.eval_jacobian(&c) {
                Ok(jac) => {
                    let eig = linalg::eigenvalues(&jac);
                    let abscissa = linalg::spectral_abscissa(&jac);
                    checks.push(Check {
                        name: "stability",
                        pass: abscissa < 0.0,
                        detail: format!("largest eigenvalue real part {abscissa}"),
                    });
                    report.eigenvalues = Some(eig.iter().map(|z| [z.re, z.im]).collect());
                    report.rho_hat = Some(-abscissa);
                }
                Err(e) => checks.push(Check {
                    name: "stability",
                    pass: false,
                    detail: e.to_string(),
                }),
            }
            let bad: Vec<String> = model
                .jumps()
                .iter()
                .filter_map(|j| {
                    let r = j.rate.eval(&c);
                    (!(r > 0.0 && r.is_finite())).then(|| format!("{} has rate {r}", j.vector))
                })
                .collect();
            checks.push(Check {
                name: "positivity",
                pass: bad.is_empty(),
                detail: if bad.is_empty() {
                    "every rate is strictly positive at c".into()
                } else {
                    bad.join("; ")
                },
            });
            report.fixed_point = Some(c);
        }
    }

    report.pass = checks.iter().all(|c| c.pass);
    if report.pass {
        match certificate(&a.common, model) {
            Ok(cert) => report.certificate = Some(cert.to_report()),
            Err(e) => {
                checks.push(Check {
                    name: "certificate",
                    pass: false,
                    detail: e.to_string(),
                });
                report.pass = false;
            }
        }
    }
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(eig) = &report.eigenvalues {
        let list: Vec<String> = eig.iter().map(|z| format!("{}{:+}i", z[0], z[1])).collect();
        println!("eigenvalues: {}", list.join(", "));
    }
    println!("{}", if report.pass { "PASS" } else { "FAIL" });
    report.checks = checks;

    let prov = Provenance::new("validate", &loaded.text, &a, a.common.seed);
    OutDir::create(&a.common.out)?.json("validate.json", &prov, &report)?;
    Ok(if report.pass { 0 } else { 2 })
}

#[derive(Serialize)]
struct AnalyzeReport {
    certificate: crate::dynamics::CertificateReport,
    inscribed_radius: f64,
    verdict: Verdict,
    mu: f64,
    nu: f64,
    n: u64,
    x0: Vec<f64>,
    t_n: f64,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let cert = certificate(&a.common, model)?;
    let y0 = a.x0.clone().map(|g| g.0).unwrap_or_else(|| vec![1.0; model.dim()]);
    check_dim(&y0, model, "--x0")?;
    positive("--N", a.n as f64)?;
    let lattice = classify_jumps(&model.jump_vectors(), LATTICE_RADIUS)?;
    let (mu, nu) = lattice.constants_for(cert.metric.matrix());
    let t_n = cutoff_time(model, &cert, &y0, a.n as f64)?;
    let flow = integrate_ode(model, &y0, a.horizon, default_step(cert.rho_hat))?;

    let prov = Provenance::new("analyze", &loaded.text, &a, a.common.seed);
    let out = OutDir::create(&a.common.out)?;
    let stride = flow.times.len().div_ceil(1000).max(1);
    let mut header = vec!["t".to_string()];
    header.extend(coord_names("y", model.dim()));
    header.push("dist_m".into());
    let rows: Vec<Vec<String>> = flow
        .times
        .iter()
        .zip(&flow.states)
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || *k + 1 == flow.times.len())
        .map(|(_, (t, y))| {
            let mut row = vec![fmt_f64(*t)];
            row.extend(y.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(cert.distance_to_centre(y)));
            row
        })
        .collect();
    out.csv("flow.csv", &prov, &header, &rows)?;
    out.json("certificate.json", &prov, &cert.to_report())?;
    let report = AnalyzeReport {
        certificate: cert.to_report(),
        inscribed_radius: inscribed_radius(model, &cert.c, &cert.metric),
        verdict: lattice.verdict,
        mu,
        nu,
        n: a.n,
        x0: y0,
        t_n,
    };
    out.json("analyze.json", &prov, &report)?;
    println!("t_N = {t_n}, rho_hat = {}, delta0 = {}", cert.rho_hat, cert.delta0);
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    n: u64,
    x0: Vec<i64>,
    reps: usize,
    horizon: f64,
    delta: Option<f64>,
    /// Mean density at the horizon.
    mean_end: Vec<f64>,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let d = model.dim();
    positive("--N", a.n as f64)?;
    if a.reps == 0 {
        return Err(CliError::Validation("--reps must be at least 1".into()));
    }
    let mut opts = SimOptions::new(a.n, a.common.seed, a.horizon);
    let mut y0 = a.x0.clone().map(|g| g.0);
    if let Some(delta) = a.delta {
        positive("--delta", delta)?;
        let cert = certificate(&a.common, model)?;
        y0 = y0.or_else(|| Some(cert.c.clone()));
        opts = opts.restricted(Restriction::new(&cert, delta, a.n));
    }
    let y0 = y0.unwrap_or_else(|| vec![1.0; d]);
    check_dim(&y0, model, "--x0")?;
    let x0 = lattice_point(&y0, a.n);

    let prov = Provenance::new("simulate", &loaded.text, &a, a.common.seed);
    let out = OutDir::create(&a.common.out)?;
    let nf = a.n as f64;
    let mean_end: Vec<f64> = if a.reps == 1 && a.dt.is_none() {
        let tr = simulate_path(model, &opts, &x0)?;
        let mut header = vec!["t".to_string()];
        header.extend(coord_names("X", d));
        let rows: Vec<Vec<String>> = tr
            .records
            .iter()
            .map(|s| {
                let mut row = vec![fmt_f64(s.t)];
                row.extend(s.x.iter().map(|v| v.to_string()));
                row
            })
            .collect();
        out.csv("trajectory.csv", &prov, &header, &rows)?;
        tr.end.x.iter().map(|&v| v as f64 / nf).collect()
    } else {
        let dt = a.dt.unwrap_or(a.horizon / 100.0);
        positive("--dt", dt)?;
        let times = obs_grid(a.horizon, dt);
        let samples = sample_paths(model, &opts, &x0, &times, a.reps)?;
        let mut header = vec!["rep".to_string(), "t".to_string()];
        header.extend(coord_names("X", d));
        let mut rows = Vec::with_capacity(a.reps * times.len());
        for rep in 0..a.reps {
            for (k, t) in times.iter().enumerate() {
                let mut row = vec![rep.to_string(), fmt_f64(*t)];
                row.extend(samples[k][rep].iter().map(|v| v.to_string()));
                rows.push(row);
            }
        }
        out.csv("samples.csv", &prov, &header, &rows)?;
        let last = samples.last().expect("grid is non-empty");
        (0..d)
            .map(|i| last.iter().map(|x| x[i] as f64).sum::<f64>() / a.reps as f64 / nf)
            .collect()
    };
    let report = SimulateReport {
        n: a.n,
        x0,
        reps: a.reps,
        horizon: a.horizon,
        delta: a.delta,
        mean_end,
    };
    out.json("simulate.json", &prov, &report)?;
    Ok(())
}

/// How the equilibrium was obtained.
#[derive(Serialize)]
struct PiSource {
    method: &'static str,
    /// Why the exact solve was skipped, if it was.
    downgrade: Option<String>,
    states: usize,
    iterations: Option<usize>,
    generator_residual: Option<f64>,
    cross_check_tv: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn solve_pi(
    model: &Model,
    cert: &StabilityCertificate,
    n: u64,
    delta: f64,
    cap: usize,
    force_empirical: bool,
    steps: u64,
    seed: u64,
) -> Result<(LatticeDistribution, PiSource), CliError> {
    let ball = Restriction::new(cert, delta, n);
    let downgrade = if force_empirical {
        Some("empirical estimate requested".to_string())
    } else {
        let opts = StationaryOptions {
            cap,
            ..Default::default()
        };
        match stationary_exact(model, &ball, n, &opts) {
            Ok(sol) => {
                let src = PiSource {
                    method: "exact",
                    downgrade: None,
                    states: sol.states,
                    iterations: Some(sol.iterations),
                    generator_residual: Some(sol.generator_residual),
                    cross_check_tv: sol.cross_check_tv,
                };
                return Ok((sol.pi, src));
            }
            Err(e @ EquilibriumError::CapExceeded { .. }) => {
                eprintln!("note: {e}; falling back to the empirical estimate");
                Some(e.to_string())
            }
            Err(e) => return Err(e.into()),
        }
    };
    let x0 = lattice_point(&cert.c, n);
    let burnin = steps / 10;
    let pi = stationary_empirical(model, &ball, n, &x0, burnin, steps, seed)?;
    let src = PiSource {
        method: "empirical",
        downgrade,
        states: pi.len(),
        iterations: None,
        generator_residual: None,
        cross_check_tv: None,
    };
    Ok((pi, src))
}

#[derive(Serialize)]
struct EquilibriumReport {
    n: u64,
    delta: f64,
    source: PiSource,
    mean: Vec<f64>,
    /// `(z, mass outside B_M(N c, N z))`.
    tail_mass: Vec<(f64, f64)>,
    /// TV to the discrete normal with the linear-noise covariance.
    tv_to_discrete_normal: Option<f64>,
}

pub fn equilibrium(a: &EquilibriumArgs) -> Result<(), CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let cert = certificate(&a.common, model)?;
    positive("--N", a.n as f64)?;
    let delta = a.delta.unwrap_or_else(|| default_delta(model, &cert));
    positive("--delta", delta)?;
    let (pi, source) = solve_pi(
        model,
        &cert,
        a.n,
        delta,
        a.state_cap,
        a.empirical,
        a.steps,
        a.common.seed,
    )?;
    let nf = a.n as f64;
    let tails = [0.25, 0.5, 0.75]
        .iter()
        .map(|f| {
            let z = f * delta;
            (z, tail_mass(&pi, &cert.c, &cert.metric, a.n, z))
        })
        .collect();
    let sigma = equilibrium_sigma2(model, &cert.c)
        .map_err(CliError::from)
        .and_then(|s2| solve_lyapunov_sigma(&cert.a, &s2).map_err(CliError::from))?;
    let tv_dn = discrete_normal(a.n, &cert.c, &sigma, 6.0)
        .ok()
        .map(|dn| dn.tv_distance(&pi));

    let prov = Provenance::new("equilibrium", &loaded.text, &a, a.common.seed);
    let out = OutDir::create(&a.common.out)?;
    let mut body = Vec::new();
    pi.write_csv(&mut body)?;
    out.csv_text("pi.csv", &prov, &body)?;
    let report = EquilibriumReport {
        n: a.n,
        delta,
        mean: pi.mean().iter().map(|v| v / nf).collect(),
        source,
        tail_mass: tails,
        tv_to_discrete_normal: tv_dn,
    };
    out.json("equilibrium.json", &prov, &report)?;
    println!(
        "{} states ({}), mean {:?}",
        report.source.states, report.source.method, report.mean
    );
    Ok(())
}

#[derive(Serialize)]
struct CutoffReport {
    n: u64,
    delta: f64,
    x0: Vec<i64>,
    t_n: f64,
    reps: usize,
    bootstrap: usize,
    pi: PiSource,
    floor: f64,
    jensen_floor: f64,
    /// s-distance between the first TV crossings of 0.9 and 0.1.
    width_09_01: Option<f64>,
}

pub fn cutoff(a: &CutoffArgs) -> Result<(), CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let cert = certificate(&a.common, model)?;
    positive("--N", a.n as f64)?;
    let y0 = a.x0.clone().map(|g| g.0).unwrap_or_else(|| vec![1.0; model.dim()]);
    check_dim(&y0, model, "--x0")?;
    let delta = a.delta.unwrap_or_else(|| default_delta(model, &cert));
    positive("--delta", delta)?;
    let (pi, source) = solve_pi(
        model,
        &cert,
        a.n,
        delta,
        a.state_cap,
        false,
        a.steps,
        a.common.seed,
    )?;
    let opts = ProfileOptions {
        n: a.n,
        seed: a.common.seed,
        reps: a.reps,
        bootstrap: a.bootstrap,
        s_grid: a.s_grid.0.clone(),
    };
    let prof = cutoff_profile(model, &cert, &y0, &opts, &pi)?;

    let prov = Provenance::new("cutoff", &loaded.text, &a, a.common.seed);
    let out = OutDir::create(&a.common.out)?;
    let header: Vec<String> = ["s", "t", "tv", "ci_low", "ci_high", "bias"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = prof
        .rows
        .iter()
        .map(|r| [r.s, r.t, r.tv, r.ci_low, r.ci_high, r.bias].map(fmt_f64).to_vec())
        .collect();
    out.csv("profile.csv", &prov, &header, &rows)?;
    let report = CutoffReport {
        n: a.n,
        delta,
        x0: prof.x0.clone(),
        t_n: prof.t_n,
        reps: a.reps,
        bootstrap: a.bootstrap,
        pi: source,
        floor: prof.floor,
        jensen_floor: prof.jensen_floor,
        width_09_01: transition_width(&prof.rows, 0.9, 0.1),
    };
    out.json("cutoff.json", &prov, &report)?;
    println!("t_N = {}, {} rows", prof.t_n, prof.rows.len());
    Ok(())
}

#[derive(Serialize)]
struct CoupleReport {
    n: u64,
    reps: usize,
    u0: Vec<i64>,
    v0: Vec<i64>,
    h0: f64,
    k2: f64,
    k2_scanned: bool,
    nu: f64,
    k3: f64,
    nu_k3: f64,
    slope: f64,
    fit_until: f64,
    coalesced_at_horizon: f64,
}

pub fn couple(a: &CoupleArgs) -> Result<(), CliError> {
    let loaded = load(&a.common)?;
    let model = &loaded.model;
    let cert = certificate(&a.common, model)?;
    positive("--N", a.n as f64)?;
    positive("--dt", a.dt)?;
    if a.reps == 0 {
        return Err(CliError::Validation("--reps must be at least 1".into()));
    }
    let nf = a.n as f64;
    let offset: Vec<f64> = {
        let mut e1 = vec![0.0; model.dim()];
        e1[0] = 1.0;
        cert.metric.from_unit(&e1).iter().map(|w| 0.05 * w).collect()
    };
    let y_u = match &a.x0 {
        Some(y) => y.0.clone(),
        None => cert.c.iter().zip(&offset).map(|(c, w)| c + w).collect(),
    };
    let y_v = match &a.v0 {
        Some(y) => y.0.clone(),
        None => cert.c.iter().zip(&offset).map(|(c, w)| c - w).collect(),
    };
    check_dim(&y_u, model, "--x0")?;
    check_dim(&y_v, model, "--v0")?;
    let (u0, v0) = (lattice_point(&y_u, a.n), lattice_point(&y_v, a.n));

    let lattice = classify_jumps(&model.jump_vectors(), LATTICE_RADIUS)?;
    let (_, nu) = lattice.constants_for(cert.metric.matrix());
    let (k2, scanned) = match a.k2 {
        Some(k) => (k, false),
        None => {
            positive("--scan-fraction", a.scan_fraction)?;
            let inscribed = inscribed_radius(model, &cert.c, &cert.metric);
            let base = if inscribed.is_finite() { inscribed } else { cert.delta0 };
            let radius = a.scan_fraction * base;
            let scan = scan_k2(model, &cert, a.n, radius, 0.2 * nf, 20_000, nf, a.common.seed)?;
            (scan.k2, true)
        }
    };
    let cfg = CouplingConfig::new(k2, cert.jstar_m, nu);
    let opts = SimOptions::new(a.n, a.common.seed, a.horizon).recording(obs_grid(a.horizon, a.dt));
    let exp = coupling_experiment(model, &cert, &cfg, &opts, &u0, &v0, a.reps, a.fit_until)?;

    let prov = Provenance::new("couple", &loaded.text, &a, a.common.seed);
    let out = OutDir::create(&a.common.out)?;
    let header: Vec<String> = ["t", "mean_h", "contractive", "independent", "coalesced"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = exp
        .rows
        .iter()
        .map(|r| [r.t, r.mean_h, r.contractive, r.independent, r.coalesced].map(fmt_f64).to_vec())
        .collect();
    out.csv("coupling.csv", &prov, &header, &rows)?;
    if a.dump_pair {
        let tr = simulate_coupled(model, &cert, &cfg, &SimOptions::new(a.n, a.common.seed, a.horizon), &u0, &v0, 0)?;
        let d = model.dim();
        let mut header = vec!["t".to_string()];
        header.extend(coord_names("U", d));
        header.extend(coord_names("V", d));
        header.push("phase".into());
        header.push("h".into());
        let rows: Vec<Vec<String>> = tr
            .records
            .iter()
            .map(|r| {
                let mut row = vec![fmt_f64(r.t)];
                row.extend(r.u.iter().map(|v| v.to_string()));
                row.extend(r.v.iter().map(|v| v.to_string()));
                row.push(r.phase.as_str().into());
                row.push(fmt_f64(r.h));
                row
            })
            .collect();
        out.csv("pair.csv", &prov, &header, &rows)?;
    }
    let report = CoupleReport {
        n: a.n,
        reps: a.reps,
        u0,
        v0,
        h0: exp.h0,
        k2,
        k2_scanned: scanned,
        nu,
        k3: exp.k3,
        nu_k3: exp.nu_k3,
        slope: exp.slope,
        fit_until: exp.fit_until,
        coalesced_at_horizon: exp.coalesced_at_horizon,
    };
    out.json("couple.json", &prov, &report)?;
    println!(
        "H0 = {:.3}, slope = {:.4}, coalesced by {} = {:.3}",
        exp.h0, exp.slope, a.horizon, exp.coalesced_at_horizon
    );
    Ok(())
}
