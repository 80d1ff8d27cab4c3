//! Stationary law `pi^{N,delta}` of the chain restricted to a ball: two
//! independent exact solvers and a long-run occupation estimate.

use std::collections::{BTreeMap, HashMap};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::distribution::tv_sorted;
use super::{enumerate_ball, EquilibriumError, LatticeDistribution, DEFAULT_STATE_CAP};
use crate::model::Model;
use crate::rng::{exp1, stream, stream_rng};
use crate::simulate::Restriction;

/// Generator of the restricted chain on its closed communicating class,
/// in compressed row form. States are in lexicographic order.
#[derive(Debug, Clone)]
pub struct RestrictedChain {
    pub states: Vec<Vec<i64>>,
    /// `row_ptr[i]..row_ptr[i + 1]` index the transitions out of state `i`.
    pub row_ptr: Vec<usize>,
    pub target: Vec<usize>,
    pub rate: Vec<f64>,
    /// Total exit rate of each state.
    pub exit: Vec<f64>,
    /// Ball states outside the closed class (transient under the
    /// restricted dynamics).
    pub transient: usize,
}

impl RestrictedChain {
    /// Enumerate `ball` intersected with the model domain, keep jumps that
    /// stay inside, and reduce to the unique closed class.
    pub fn build(model: &Model, ball: &Restriction, n: u64, cap: usize) -> Result<Self, EquilibriumError> {
        let nf = n as f64;
        let all: Vec<Vec<i64>> = enumerate_ball(ball, cap)?
            .into_iter()
            .filter(|x| model.domain().contains_lattice(x, nf))
            .collect();
        if all.is_empty() {
            return Err(EquilibriumError::Empty);
        }
        let index: HashMap<&[i64], usize> =
            all.iter().enumerate().map(|(i, x)| (x.as_slice(), i)).collect();
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); all.len()];
        let mut rates = vec![0.0; model.num_jumps()];
        let mut y = vec![0.0; model.dim()];
        let mut cand = vec![0i64; model.dim()];
        for (i, x) in all.iter().enumerate() {
            for (yk, xk) in y.iter_mut().zip(x) {
                *yk = *xk as f64 / nf;
            }
            model.rates_into(&y, &mut rates)?;
            for (k, r) in rates.iter().enumerate() {
                if *r == 0.0 {
                    continue;
                }
                let j = model.jumps()[k].vector.entries();
                for t in 0..x.len() {
                    cand[t] = x[t] + j[t];
                }
                if let Some(&to) = index.get(cand.as_slice()) {
                    edges[i].push((to, r * nf));
                }
            }
        }

        let mut g = DiGraph::<(), ()>::with_capacity(all.len(), 0);
        let nodes: Vec<_> = (0..all.len()).map(|_| g.add_node(())).collect();
        for (i, out) in edges.iter().enumerate() {
            for &(to, _) in out {
                g.add_edge(nodes[i], nodes[to], ());
            }
        }
        let sccs = tarjan_scc(&g);
        let mut comp = vec![0usize; all.len()];
        for (c, scc) in sccs.iter().enumerate() {
            for v in scc {
                comp[v.index()] = c;
            }
        }
        let closed: Vec<usize> = (0..sccs.len())
            .filter(|&c| {
                sccs[c]
                    .iter()
                    .all(|v| edges[v.index()].iter().all(|&(to, _)| comp[to] == c))
            })
            .collect();
        if closed.len() != 1 {
            return Err(EquilibriumError::Reducible { closed: closed.len() });
        }
        let keep: Vec<bool> = comp.iter().map(|&c| c == closed[0]).collect();
        let mut new_index = vec![usize::MAX; all.len()];
        let mut states = Vec::new();
        for (i, x) in all.iter().enumerate() {
            if keep[i] {
                new_index[i] = states.len();
                states.push(x.clone());
            }
        }
        let mut row_ptr = vec![0];
        let mut target = Vec::new();
        let mut rate = Vec::new();
        let mut exit = Vec::new();
        for (i, out) in edges.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let mut e = 0.0;
            for &(to, r) in out {
                // A closed class has no edges leaving it.
                debug_assert!(keep[to]);
                target.push(new_index[to]);
                rate.push(r);
                e += r;
            }
            exit.push(e);
            row_ptr.push(target.len());
        }
        Ok(RestrictedChain {
            transient: all.len() - states.len(),
            states,
            row_ptr,
            target,
            rate,
            exit,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_exit(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    /// `|pi Q|_1`.
    pub fn generator_residual(&self, pi: &[f64]) -> f64 {
        let mut flow: Vec<f64> = pi.iter().zip(&self.exit).map(|(p, e)| -p * e).collect();
        for i in 0..self.len() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                flow[self.target[e]] += pi[i] * self.rate[e];
            }
        }
        flow.iter().map(|v| v.abs()).sum()
    }

    /// Largest index distance between the endpoints of a transition.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for i in 0..self.len() {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                b = b.max(i.abs_diff(self.target[e]));
            }
        }
        b
    }

    fn distribution(&self, pi: &[f64]) -> Result<LatticeDistribution, EquilibriumError> {
        LatticeDistribution::new(self.states.clone(), pi.iter().map(|p| p.max(0.0)).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    pub cap: usize,
    /// Target for `|pi Q|_1`; power iteration runs until
    /// `|pi P - pi|_1 <= min(1e-10, tol / Lambda)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Run the direct solver as a cross-check up to this many states.
    pub cross_check_limit: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        StationaryOptions {
            cap: DEFAULT_STATE_CAP,
            tol: 1e-10,
            max_iter: 5_000_000,
            cross_check_limit: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub pi: LatticeDistribution,
    pub states: usize,
    pub transient: usize,
    pub iterations: usize,
    /// `|pi P - pi|_1` at termination.
    pub power_residual: f64,
    /// `|pi Q|_1` re-checked against the assembled generator.
    pub generator_residual: f64,
    /// TV between the power-iteration and direct solutions, when run.
    pub cross_check_tv: Option<f64>,
}

/// Power iteration on the uniformised kernel `P = I + Q / Lambda` with
/// `Lambda` the largest exit rate. Returns `(pi, iterations, residual)`.
pub fn stationary_power(
    chain: &RestrictedChain,
    opts: &StationaryOptions,
) -> Result<(Vec<f64>, usize, f64), EquilibriumError> {
    let n = chain.len();
    let lambda = chain.max_exit();
    if n == 1 || lambda == 0.0 {
        return Ok((vec![1.0 / n as f64; n], 0, 0.0));
    }
    let tol = (opts.tol / lambda).min(1e-10);
    let stay: Vec<f64> = chain.exit.iter().map(|e| 1.0 - e / lambda).collect();
    let scaled: Vec<f64> = chain.rate.iter().map(|r| r / lambda).collect();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for (nx, (p, s)) in next.iter_mut().zip(pi.iter().zip(&stay)) {
            *nx = p * s;
        }
        for i in 0..n {
            let p = pi[i];
            for e in chain.row_ptr[i]..chain.row_ptr[i + 1] {
                next[chain.target[e]] += p * scaled[e];
            }
        }
        let total: f64 = next.iter().sum();
        residual = 0.0;
        for (nx, p) in next.iter_mut().zip(&pi) {
            *nx /= total;
            residual += (*nx - p).abs();
        }
        std::mem::swap(&mut pi, &mut next);
        if residual <= tol {
            return Ok((pi, it, residual));
        }
    }
    Err(EquilibriumError::NotConverged {
        iterations: opts.max_iter,
        residual,
    })
}

/// Direct solve by Grassmann-Taksar-Heyman state reduction on the banded
/// generator. Subtraction-free, so accurate without pivoting; cost is
/// `n b^2` for bandwidth `b`.
pub fn stationary_direct(chain: &RestrictedChain) -> Result<Vec<f64>, EquilibriumError> {
    let n = chain.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let b = chain.bandwidth();
    let w = 2 * b + 1;
    // band[i * w + (j + b - i)] holds q_ij for |i - j| <= b.
    let mut band = vec![0.0f64; n * w];
    let at = |i: usize, j: usize| i * w + j + b - i;
    for i in 0..n {
        for e in chain.row_ptr[i]..chain.row_ptr[i + 1] {
            band[at(i, chain.target[e])] += chain.rate[e];
        }
    }
    let mut s = vec![0.0f64; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(b);
        let sk: f64 = (lo..k).map(|j| band[at(k, j)]).sum();
        if !(sk > 0.0) {
            return Err(EquilibriumError::Reducible { closed: 2 });
        }
        s[k] = sk;
        for i in lo..k {
            let qik = band[at(i, k)];
            if qik == 0.0 {
                continue;
            }
            let f = qik / sk;
            for j in lo..k {
                if j != i {
                    band[at(i, j)] += f * band[at(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0f64; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(b);
        pi[k] = (lo..k).map(|i| pi[i] * band[at(i, k)]).sum::<f64>() / s[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// `pi^{N,delta}` by power iteration, cross-checked against the direct
/// solver for small chains.
pub fn stationary_exact(
    model: &Model,
    ball: &Restriction,
    n: u64,
    opts: &StationaryOptions,
) -> Result<StationarySolution, EquilibriumError> {
    let chain = RestrictedChain::build(model, ball, n, opts.cap)?;
    let (pi, iterations, power_residual) = stationary_power(&chain, opts)?;
    let cross_check_tv = if chain.len() <= opts.cross_check_limit {
        let direct = stationary_direct(&chain)?;
        Some(tv_sorted(&chain.states, &pi, &chain.states, &direct))
    } else {
        None
    };
    Ok(StationarySolution {
        generator_residual: chain.generator_residual(&pi),
        pi: chain.distribution(&pi)?,
        states: chain.len(),
        transient: chain.transient,
        iterations,
        power_residual,
        cross_check_tv,
    })
}

/// Time-weighted occupation law of one long restricted path from `x0`:
/// `burnin` jumps are discarded, then the holding times of the next
/// `steps` states are accumulated.
pub fn stationary_empirical(
    model: &Model,
    ball: &Restriction,
    n: u64,
    x0: &[i64],
    burnin: u64,
    steps: u64,
    seed: u64,
) -> Result<LatticeDistribution, EquilibriumError> {
    if steps == 0 {
        return Err(EquilibriumError::Precondition("steps must be at least 1".into()));
    }
    let nf = n as f64;
    if !ball.contains(x0) || !model.domain().contains_lattice(x0, nf) {
        return Err(EquilibriumError::Precondition(format!(
            "start {x0:?} must lie in the ball and the domain"
        )));
    }
    let mut rng = stream_rng(seed, stream::EMPIRICAL_STATIONARY, 0);
    let k = model.num_jumps();
    let mut rates = vec![0.0; k];
    let mut y = vec![0.0; model.dim()];
    let mut cand = x0.to_vec();
    let mut x = x0.to_vec();
    // Ordered so the normalising sum is reproducible bit for bit.
    let mut occupation: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for step in 0..burnin + steps {
        for (yk, xk) in y.iter_mut().zip(&x) {
            *yk = *xk as f64 / nf;
        }
        model.rates_into(&y, &mut rates)?;
        let mut total = 0.0;
        for (j, r) in rates.iter_mut().enumerate() {
            if *r == 0.0 {
                continue;
            }
            let v = model.jumps()[j].vector.entries();
            for t in 0..x.len() {
                cand[t] = x[t] + v[t];
            }
            if ball.contains(&cand) && model.domain().contains_lattice(&cand, nf) {
                *r *= nf;
                total += *r;
            } else {
                *r = 0.0;
            }
        }
        if total == 0.0 {
            return Ok(LatticeDistribution::point_mass(x));
        }
        let hold = exp1(&mut rng) / total;
        if step >= burnin {
            *occupation.entry(x.clone()).or_insert(0.0) += hold;
        }
        let target = rand::Rng::random::<f64>(&mut rng) * total;
        let mut acc = 0.0;
        let mut pick = k;
        for (j, r) in rates.iter().enumerate() {
            if *r > 0.0 {
                acc += r;
                pick = j;
                if target < acc {
                    break;
                }
            }
        }
        let v = model.jumps()[pick].vector.entries();
        for t in 0..x.len() {
            x[t] += v[t];
        }
    }
    let (support, weights): (Vec<_>, Vec<_>) = occupation.into_iter().unzip();
    LatticeDistribution::new(support, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{certify, CertifyOptions, Metric};
    use crate::model::{builtin_hamer_sir, parse_model};

    fn birth_death() -> Model {
        parse_model("dimension = 1\n[jumps]\n(1) : 2 + x1\n(-1) : 3 * x1\n").unwrap()
    }

    /// Detailed balance: `pi(x + 1) / pi(x) = b(x) / d(x + 1)`.
    fn product_formula(n: u64, lo: i64, hi: i64) -> Vec<f64> {
        let nf = n as f64;
        let mut w = vec![1.0];
        for x in lo..hi {
            let b = nf * (2.0 + x as f64 / nf);
            let d = nf * 3.0 * (x + 1) as f64 / nf;
            w.push(w.last().unwrap() * b / d);
        }
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn birth_death_matches_product_formula() {
        let m = birth_death();
        let n = 40;
        // c = 1; ball [20, 60] in lattice units.
        let ball = Restriction::with_metric(&[1.0], Metric::identity(1), 0.5, n);
        let sol = stationary_exact(&m, &ball, n, &StationaryOptions::default()).unwrap();
        let want = product_formula(n, 20, 60);
        assert_eq!(sol.pi.len(), want.len());
        for (p, q) in sol.pi.mass().iter().zip(&want) {
            assert!((p - q).abs() < 1e-10, "{p} vs {q}");
        }
        let chain = RestrictedChain::build(&m, &ball, n, 1000).unwrap();
        for (p, q) in stationary_direct(&chain).unwrap().iter().zip(&want) {
            assert!((p - q).abs() < 1e-13);
        }
        assert!(sol.generator_residual <= 1e-9);
        assert!(sol.cross_check_tv.unwrap() < 1e-10);
    }

    #[test]
    fn single_state_ball_is_a_point_mass() {
        let m = birth_death();
        let ball = Restriction::with_metric(&[1.0], Metric::identity(1), 0.01, 10);
        let sol = stationary_exact(&m, &ball, 10, &StationaryOptions::default()).unwrap();
        assert_eq!(sol.pi, LatticeDistribution::point_mass(vec![10]));
        let e = stationary_empirical(&m, &ball, 10, &[10], 5, 100, 1).unwrap();
        assert_eq!(e, LatticeDistribution::point_mass(vec![10]));
    }

    #[test]
    fn solvers_agree_on_sir() {
        let m = builtin_hamer_sir(2.0, 1.0, 1.0).unwrap();
        let cert = certify(&m, &[1.0, 1.0], CertifyOptions { rho_fraction: 0.5, ..Default::default() }).unwrap();
        let n = 20;
        let ball = Restriction::new(&cert, 0.6, n);
        let sol = stationary_exact(&m, &ball, n, &StationaryOptions::default()).unwrap();
        assert!(sol.states > 100);
        assert!(sol.cross_check_tv.unwrap() <= 1e-8, "{:?}", sol.cross_check_tv);
        assert!(sol.generator_residual <= 1e-9);
    }

    #[test]
    fn two_closed_classes_are_rejected() {
        // Jumps of +/-2 split the ball into two closed parity classes.
        let m = parse_model("dimension = 1\n[jumps]\n(2) : 1\n(-2) : x1\n").unwrap();
        let ball = Restriction::with_metric(&[1.0], Metric::identity(1), 0.5, 10);
        let r = RestrictedChain::build(&m, &ball, 10, 1000);
        assert!(matches!(r, Err(EquilibriumError::Reducible { closed: 2 })));
    }

    #[test]
    fn transient_states_are_dropped() {
        // Pure death: every state drains to the lowest ball state.
        let m = parse_model("dimension = 1\n[jumps]\n(-1) : x1\n").unwrap();
        let ball = Restriction::with_metric(&[1.0], Metric::identity(1), 0.3, 10);
        let sol = stationary_exact(&m, &ball, 10, &StationaryOptions::default()).unwrap();
        assert_eq!(sol.pi, LatticeDistribution::point_mass(vec![7]));
        assert_eq!(sol.transient, 6);
    }

    #[test]
    fn empirical_estimate_is_close_to_exact() {
        let m = birth_death();
        let n = 40;
        let ball = Restriction::with_metric(&[1.0], Metric::identity(1), 0.5, n);
        let exact = stationary_exact(&m, &ball, n, &StationaryOptions::default()).unwrap();
        let a = stationary_empirical(&m, &ball, n, &[40], 1000, 200_000, 1).unwrap();
        let b = stationary_empirical(&m, &ball, n, &[40], 1000, 200_000, 2).unwrap();
        let ta = a.tv_distance(&exact.pi);
        assert!(ta < 0.03, "{ta}");
        assert!(a.tv_distance(&b) <= 2.0 * ta.max(b.tv_distance(&exact.pi)));
    }
}
