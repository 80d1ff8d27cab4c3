//! Lattice structure of a jump set.
//!
//! A finite jump set either generates all of `Z^d` with nonnegative integer
//! combinations (spanning), or its integer span is a strict sublattice, or
//! some nonzero `v` has `v . J >= 0` for every jump. Each verdict carries a
//! witness that can be re-checked with integer arithmetic.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use super::JumpVector;

/// Node budget for the breadth-first search.
const MAX_BFS_NODES: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("jump list is empty")]
    Empty,
    #[error("jump vectors have inconsistent dimensions")]
    DimensionMismatch,
    #[error(
        "inconclusive: no decomposition of every unit vector within {radius} jumps and no \
         sublattice or separating certificate; raise the search radius"
    )]
    Inconclusive { radius: usize },
    #[error("jump set is not spanning")]
    NotSpanning,
    #[error("target has {got} coordinates, expected {dim}")]
    TargetDimension { got: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Verdict {
    Spanning,
    /// Rows of an echelon basis whose integer span contains every jump but
    /// is not all of `Z^d`.
    Sublattice { basis: Vec<Vec<i64>> },
    /// `v . J >= 0` for every jump.
    Separated { normal: Vec<i64> },
}

/// A multiset of jumps, stored as a count per jump index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub target: Vec<i64>,
    pub counts: Vec<u64>,
}

impl Decomposition {
    /// Number of jumps in the multiset.
    pub fn len(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sum(&self, jumps: &[JumpVector]) -> Vec<i64> {
        let d = self.target.len();
        let mut s = vec![0i64; d];
        for (j, &n) in jumps.iter().zip(&self.counts) {
            for (si, &ji) in s.iter_mut().zip(j.entries()) {
                *si += ji * n as i64;
            }
        }
        s
    }

    /// `sum_q |q|_M` over the multiset.
    pub fn mass(&self, jumps: &[JumpVector], metric: &DMatrix<f64>) -> f64 {
        jumps
            .iter()
            .zip(&self.counts)
            .map(|(j, &n)| n as f64 * quad_norm(metric, &j.as_f64()))
            .sum()
    }

    /// Expanded multiset, in jump order.
    pub fn items(&self, jumps: &[JumpVector]) -> Vec<JumpVector> {
        let mut out = Vec::new();
        for (j, &n) in jumps.iter().zip(&self.counts) {
            for _ in 0..n {
                out.push(j.clone());
            }
        }
        out
    }
}

fn quad_norm(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for k in 0..d {
            s += x[i] * m[(i, k)] * x[k];
        }
    }
    s.max(0.0).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeAnalysis {
    pub jumps: Vec<JumpVector>,
    pub verdict: Verdict,
    /// For spanning sets: decompositions of `e1, -e1, e2, -e2, ...`.
    pub decompositions: Vec<Decomposition>,
    /// Path-length constant in the Euclidean norm.
    pub mu: f64,
    /// Path-mass constant in the Euclidean norm.
    pub nu: f64,
}

impl LatticeAnalysis {
    pub fn dim(&self) -> usize {
        self.jumps[0].dim()
    }

    pub fn is_spanning(&self) -> bool {
        self.verdict == Verdict::Spanning
    }

    /// Decomposition of `sign * e_i`.
    pub fn unit(&self, i: usize, positive: bool) -> &Decomposition {
        &self.decompositions[2 * i + usize::from(!positive)]
    }

    /// `(mu, nu)` such that `decompose_vector(z)` uses at most `mu |z|_M`
    /// jumps of total `M`-length at most `nu |z|_M`.
    ///
    /// Composing unit decompositions gives `n <= l0 |z|_1` and
    /// `mass <= m0 |z|_1`, and `|z|_1 <= g |z|_M` with
    /// `g = max_s sqrt(s' M^-1 s)` over sign vectors `s`.
    pub fn constants_for(&self, metric: &DMatrix<f64>) -> (f64, f64) {
        if !self.is_spanning() {
            return (f64::INFINITY, f64::INFINITY);
        }
        let d = self.dim();
        let inv = metric
            .clone()
            .try_inverse()
            .expect("metric must be positive definite");
        let mut g2: f64 = 0.0;
        for mask in 0u64..(1u64 << d) {
            let s: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            g2 = g2.max(quad_norm(&inv, &s).powi(2));
        }
        let g = g2.sqrt();
        let l0 = self.decompositions.iter().map(|p| p.len()).max().unwrap_or(0) as f64;
        let m0 = self
            .decompositions
            .iter()
            .map(|p| p.mass(&self.jumps, metric))
            .fold(0.0, f64::max);
        (l0 * g, m0 * g)
    }

    /// Re-check the witness with exact arithmetic.
    pub fn verify(&self) -> bool {
        let d = self.dim();
        match &self.verdict {
            Verdict::Spanning => {
                self.decompositions.len() == 2 * d
                    && (0..d).all(|i| {
                        [true, false].iter().all(|&pos| {
                            let mut e = vec![0i64; d];
                            e[i] = if pos { 1 } else { -1 };
                            let p = self.unit(i, pos);
                            p.target == e && p.sum(&self.jumps) == e
                        })
                    })
            }
            Verdict::Sublattice { basis } => verify_sublattice(&self.jumps, basis),
            Verdict::Separated { normal } => {
                normal.iter().any(|&v| v != 0)
                    && self.jumps.iter().all(|j| dot(normal, j.entries()) >= 0)
            }
        }
    }
}

fn dot(a: &[i64], b: &[i64]) -> i128 {
    a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum()
}

/// Basis rows must be in echelon form; checks every jump is an integer
/// combination and the basis does not generate `Z^d`.
fn verify_sublattice(jumps: &[JumpVector], basis: &[Vec<i64>]) -> bool {
    let d = jumps[0].dim();
    let mut pivots = Vec::new();
    let mut last: Option<usize> = None;
    for row in basis {
        if row.len() != d {
            return false;
        }
        match row.iter().position(|&v| v != 0) {
            Some(p) if last.is_none_or(|l| p > l) => {
                pivots.push(p);
                last = Some(p);
            }
            _ => return false,
        }
    }
    let strict = basis.len() < d
        || basis
            .iter()
            .zip(&pivots)
            .map(|(r, &p)| r[p].unsigned_abs() as u128)
            .product::<u128>()
            != 1;
    strict && jumps.iter().all(|j| in_span(basis, &pivots, j.entries()))
}

fn in_span(basis: &[Vec<i64>], pivots: &[usize], v: &[i64]) -> bool {
    let mut r: Vec<i128> = v.iter().map(|&x| x as i128).collect();
    for (row, &p) in basis.iter().zip(pivots) {
        let piv = row[p] as i128;
        if r[p] % piv != 0 {
            return false;
        }
        let q = r[p] / piv;
        for (ri, &bi) in r.iter_mut().zip(row) {
            *ri -= q * bi as i128;
        }
    }
    r.iter().all(|&x| x == 0)
}

/// Row-style Hermite normal form (nonzero rows, positive pivots).
fn hermite_rows(jumps: &[JumpVector]) -> Vec<Vec<i128>> {
    let d = jumps[0].dim();
    let mut a: Vec<Vec<i128>> = jumps
        .iter()
        .map(|j| j.entries().iter().map(|&v| v as i128).collect())
        .collect();
    let mut prow = 0;
    for col in 0..d {
        if prow == a.len() {
            break;
        }
        for r in prow + 1..a.len() {
            while a[r][col] != 0 {
                if a[prow][col] == 0 || a[r][col].abs() < a[prow][col].abs() {
                    a.swap(prow, r);
                    continue;
                }
                let q = a[r][col] / a[prow][col];
                let (top, bottom) = a.split_at_mut(r);
                for (x, &y) in bottom[0].iter_mut().zip(&top[prow]) {
                    *x -= q * y;
                }
            }
        }
        if a[prow][col] != 0 {
            if a[prow][col] < 0 {
                a[prow].iter_mut().for_each(|v| *v = -*v);
            }
            // Reduce the entries above the pivot into [0, pivot).
            let piv = a[prow][col];
            for r in 0..prow {
                let q = a[r][col].div_euclid(piv);
                if q != 0 {
                    let (top, bottom) = a.split_at_mut(prow);
                    for (x, &y) in top[r].iter_mut().zip(&bottom[0]) {
                        *x -= q * y;
                    }
                }
            }
            prow += 1;
        }
    }
    a.truncate(prow);
    a
}

/// Integer vector orthogonal to the `d - 1` given vectors (generalized
/// cross product via cofactors).
fn cofactor_normal(rows: &[&[i64]], d: usize) -> Vec<i128> {
    (0..d)
        .map(|k| {
            let minor: Vec<Vec<i128>> = rows
                .iter()
                .map(|r| {
                    (0..d)
                        .filter(|&c| c != k)
                        .map(|c| r[c] as i128)
                        .collect()
                })
                .collect();
            let sign = if k % 2 == 0 { 1 } else { -1 };
            sign * det_bareiss(minor)
        })
        .collect()
}

/// Exact integer determinant (fraction-free elimination).
fn det_bareiss(mut a: Vec<Vec<i128>>) -> i128 {
    let n = a.len();
    if n == 0 {
        return 1;
    }
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&r| a[r][k] != 0) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn primitive(v: Vec<i128>) -> Option<Vec<i64>> {
    let g = v.iter().fold(0, |g, &x| gcd(g, x));
    if g == 0 {
        return None;
    }
    v.iter().map(|&x| i64::try_from(x / g).ok()).collect()
}

fn subsets(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Separating normal for a full-rank jump set, if one exists.
///
/// When the jumps span `R^d` the cone `{v : v . J >= 0}` is pointed, so its
/// extreme rays are orthogonal to `d - 1` independent jumps; enumerating
/// those subsets is complete. The returned witness is the primitive sum of
/// all extreme rays found, an interior point of that cone.
fn separating_normal(jumps: &[JumpVector]) -> Option<Vec<i64>> {
    let d = jumps[0].dim();
    if d == 1 {
        let all_pos = jumps.iter().all(|j| j.entries()[0] > 0);
        let all_neg = jumps.iter().all(|j| j.entries()[0] < 0);
        return match (all_pos, all_neg) {
            (true, _) => Some(vec![1]),
            (_, true) => Some(vec![-1]),
            _ => None,
        };
    }
    let mut rays: Vec<Vec<i64>> = Vec::new();
    subsets(jumps.len(), d - 1, |idx| {
        let rows: Vec<&[i64]> = idx.iter().map(|&i| jumps[i].entries()).collect();
        let Some(n) = primitive(cofactor_normal(&rows, d)) else {
            return;
        };
        for cand in [n.clone(), n.iter().map(|v| -v).collect()] {
            if jumps.iter().all(|j| dot(&cand, j.entries()) >= 0) && !rays.contains(&cand) {
                rays.push(cand);
            }
        }
    });
    if rays.is_empty() {
        return None;
    }
    let mut sum = vec![0i128; d];
    for r in &rays {
        for (s, &v) in sum.iter_mut().zip(r) {
            *s += v as i128;
        }
    }
    primitive(sum)
}

/// Breadth-first search over nonnegative jump combinations of length at
/// most `radius`; returns shortest decompositions for the targets found.
fn bfs_decompose(
    jumps: &[JumpVector],
    targets: &[Vec<i64>],
    radius: usize,
) -> Vec<Option<Decomposition>> {
    let mut found: Vec<Option<Decomposition>> = vec![None; targets.len()];
    let mut remaining = targets.len();
    // parent index and jump index per node
    let mut nodes: Vec<(Vec<i64>, usize, usize)> = vec![(vec![0; jumps[0].dim()], usize::MAX, 0)];
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    index.insert(nodes[0].0.clone(), 0);
    let mut frontier = 0..1;
    for _ in 0..radius {
        if remaining == 0 || nodes.len() > MAX_BFS_NODES {
            break;
        }
        let start = nodes.len();
        for n in frontier.clone() {
            for (k, j) in jumps.iter().enumerate() {
                let p: Vec<i64> = nodes[n].0.iter().zip(j.entries()).map(|(a, b)| a + b).collect();
                if index.contains_key(&p) {
                    continue;
                }
                index.insert(p.clone(), nodes.len());
                nodes.push((p, n, k));
            }
        }
        for (t, target) in targets.iter().enumerate() {
            if found[t].is_some() {
                continue;
            }
            if let Some(&leaf) = index.get(target) {
                let mut counts = vec![0u64; jumps.len()];
                let mut cur = leaf;
                while cur != 0 {
                    counts[nodes[cur].2] += 1;
                    cur = nodes[cur].1;
                }
                found[t] = Some(Decomposition {
                    target: target.clone(),
                    counts,
                });
                remaining -= 1;
            }
        }
        frontier = start..nodes.len();
    }
    found
}

/// Classify a jump set.
pub fn classify_jumps(
    jumps: &[JumpVector],
    search_radius: usize,
) -> Result<LatticeAnalysis, LatticeError> {
    if jumps.is_empty() {
        return Err(LatticeError::Empty);
    }
    let d = jumps[0].dim();
    if jumps.iter().any(|j| j.dim() != d) {
        return Err(LatticeError::DimensionMismatch);
    }
    let targets: Vec<Vec<i64>> = (0..d)
        .flat_map(|i| {
            [1, -1].map(|s| {
                let mut e = vec![0i64; d];
                e[i] = s;
                e
            })
        })
        .collect();
    let found = bfs_decompose(jumps, &targets, search_radius.max(1));
    if found.iter().all(Option::is_some) {
        let mut a = LatticeAnalysis {
            jumps: jumps.to_vec(),
            verdict: Verdict::Spanning,
            decompositions: found.into_iter().flatten().collect(),
            mu: 0.0,
            nu: 0.0,
        };
        let (mu, nu) = a.constants_for(&DMatrix::identity(d, d));
        a.mu = mu;
        a.nu = nu;
        return Ok(a);
    }

    let h = hermite_rows(jumps);
    let pivot_product: i128 = h
        .iter()
        .map(|r| r.iter().find(|&&v| v != 0).copied().unwrap_or(0))
        .product();
    let verdict = if h.len() < d || pivot_product != 1 {
        let basis = h
            .iter()
            .map(|r| r.iter().map(|&v| v as i64).collect())
            .collect();
        Verdict::Sublattice { basis }
    } else if let Some(normal) = separating_normal(jumps) {
        Verdict::Separated { normal }
    } else {
        return Err(LatticeError::Inconclusive {
            radius: search_radius,
        });
    };
    Ok(LatticeAnalysis {
        jumps: jumps.to_vec(),
        verdict,
        decompositions: Vec::new(),
        mu: f64::INFINITY,
        nu: f64::INFINITY,
    })
}

/// Write `z` as a multiset of jumps by composing the unit decompositions
/// along the coordinate path.
pub fn decompose_vector(
    analysis: &LatticeAnalysis,
    z: &[i64],
) -> Result<Decomposition, LatticeError> {
    if !analysis.is_spanning() {
        return Err(LatticeError::NotSpanning);
    }
    let d = analysis.dim();
    if z.len() != d {
        return Err(LatticeError::TargetDimension { got: z.len(), dim: d });
    }
    let mut counts = vec![0u64; analysis.jumps.len()];
    for (i, &zi) in z.iter().enumerate() {
        if zi == 0 {
            continue;
        }
        let unit = analysis.unit(i, zi > 0);
        for (c, &u) in counts.iter_mut().zip(&unit.counts) {
            *c += u * zi.unsigned_abs();
        }
    }
    Ok(Decomposition {
        target: z.to_vec(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jv(list: &[&[i64]]) -> Vec<JumpVector> {
        list.iter().map(|v| JumpVector::new(v.to_vec()).unwrap()).collect()
    }

    fn sir_jumps() -> Vec<JumpVector> {
        jv(&[&[-1, 1], &[1, 0], &[0, -1]])
    }

    #[test]
    fn sir_is_spanning_with_short_decompositions() {
        let a = classify_jumps(&sir_jumps(), 4).unwrap();
        assert_eq!(a.verdict, Verdict::Spanning);
        assert!(a.verify());
        assert_eq!(a.unit(0, true).counts, vec![0, 1, 0]);
        assert_eq!(a.unit(1, true).counts, vec![1, 1, 0]);
        assert_eq!(a.unit(0, false).counts, vec![1, 0, 1]);
        assert_eq!(a.unit(1, false).counts, vec![0, 0, 1]);
    }

    #[test]
    fn even_lattice_is_a_sublattice() {
        let a = classify_jumps(&jv(&[&[2, 0], &[0, 2], &[-2, 0], &[0, -2]]), 6).unwrap();
        assert_eq!(
            a.verdict,
            Verdict::Sublattice {
                basis: vec![vec![2, 0], vec![0, 2]]
            }
        );
        assert!(a.verify());
    }

    #[test]
    fn rank_deficient_set_is_a_sublattice() {
        let a = classify_jumps(&jv(&[&[1, 1], &[-1, -1]]), 6).unwrap();
        assert!(matches!(a.verdict, Verdict::Sublattice { ref basis } if basis.len() == 1));
        assert!(a.verify());
    }

    #[test]
    fn positive_quadrant_is_separated() {
        let a = classify_jumps(&jv(&[&[1, 0], &[0, 1]]), 6).unwrap();
        assert_eq!(a.verdict, Verdict::Separated { normal: vec![1, 1] });
        assert!(a.verify());
        let a = classify_jumps(&jv(&[&[-1]]), 3).unwrap();
        assert_eq!(a.verdict, Verdict::Separated { normal: vec![-1] });
    }

    #[test]
    fn three_dimensional_separation() {
        let a = classify_jumps(&jv(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1], &[1, -1, 0]]), 4).unwrap();
        match &a.verdict {
            Verdict::Separated { normal } => {
                assert!(a.verify());
                assert!(normal.iter().any(|&v| v != 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_radius_is_inconclusive() {
        // Spans Z^2 but -e1 needs many steps.
        let jumps = jv(&[&[1, 0], &[0, 1], &[-5, -7]]);
        assert_eq!(
            classify_jumps(&jumps, 2).unwrap_err(),
            LatticeError::Inconclusive { radius: 2 }
        );
        let a = classify_jumps(&jumps, 20).unwrap();
        assert!(a.is_spanning() && a.verify());
    }

    #[test]
    fn decompose_examples() {
        let a = classify_jumps(&sir_jumps(), 4).unwrap();
        let p = decompose_vector(&a, &[0, 1]).unwrap();
        assert_eq!(
            p.items(&a.jumps),
            jv(&[&[-1, 1], &[1, 0]])
        );
        assert!(decompose_vector(&a, &[0, 0]).unwrap().is_empty());
        let p = decompose_vector(&a, &[3, -2]).unwrap();
        assert_eq!(p.sum(&a.jumps), vec![3, -2]);
        let zn = 13f64.sqrt();
        assert!(p.len() as f64 <= a.mu * zn + 1e-12);
        let sep = classify_jumps(&jv(&[&[1, 0], &[0, 1]]), 3).unwrap();
        assert_eq!(decompose_vector(&sep, &[1, 0]), Err(LatticeError::NotSpanning));
    }

    #[test]
    fn hermite_handles_negative_and_redundant_rows() {
        let h = hermite_rows(&jv(&[&[4, 6], &[-6, -9], &[2, 3]]));
        assert_eq!(h, vec![vec![2, 3]]);
        let h = hermite_rows(&jv(&[&[3, 1], &[1, 1]]));
        assert_eq!(h.len(), 2);
        assert_eq!(h[0][0] * h[1][1], 2);
    }

    #[test]
    fn bareiss_matches_known_determinants() {
        assert_eq!(det_bareiss(vec![vec![2, 1], vec![1, 3]]), 5);
        assert_eq!(det_bareiss(vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]]), -1);
        assert_eq!(det_bareiss(vec![vec![1, 2], vec![2, 4]]), 0);
    }

    proptest! {
        #[test]
        fn witnesses_always_verify(
            raw in proptest::collection::vec(proptest::collection::vec(-3i64..=3, 2), 1..5)
        ) {
            let mut jumps: Vec<JumpVector> = Vec::new();
            for v in raw {
                if let Ok(j) = JumpVector::new(v) {
                    if !jumps.contains(&j) {
                        jumps.push(j);
                    }
                }
            }
            prop_assume!(!jumps.is_empty());
            if let Ok(a) = classify_jumps(&jumps, 12) {
                prop_assert!(a.verify());
            }
        }

        #[test]
        fn decompositions_sum_and_respect_constants(z in proptest::collection::vec(-20i64..=20, 2)) {
            let a = classify_jumps(&sir_jumps(), 4).unwrap();
            let m = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8]);
            let (mu, nu) = a.constants_for(&m);
            let p = decompose_vector(&a, &z).unwrap();
            prop_assert_eq!(p.sum(&a.jumps), z.clone());
            let zm = quad_norm(&m, &[z[0] as f64, z[1] as f64]);
            prop_assert!(p.len() as f64 <= mu * zm + 1e-9);
            prop_assert!(p.mass(&a.jumps, &m) <= nu * zm + 1e-9);
        }
    }
}
