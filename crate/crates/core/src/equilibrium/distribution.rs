//! Finitely supported probability laws on `Z^d`.

use std::io::{Read, Write};

use serde::Serialize;

use super::EquilibriumError;

/// Probability mass function with lexicographically sorted, distinct
/// support. Masses are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeDistribution {
    support: Vec<Vec<i64>>,
    mass: Vec<f64>,
}

/// Distinct states in sorted order with their multiplicities.
pub fn count_states(samples: &[Vec<i64>]) -> (Vec<Vec<i64>>, Vec<u64>) {
    let mut sorted: Vec<&Vec<i64>> = samples.iter().collect();
    sorted.sort_unstable();
    let mut states: Vec<Vec<i64>> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for s in sorted {
        match states.last() {
            Some(last) if last == s => *counts.last_mut().unwrap() += 1,
            _ => {
                states.push(s.clone());
                counts.push(1);
            }
        }
    }
    (states, counts)
}

impl LatticeDistribution {
    /// Normalises `weights`; duplicate states are an error.
    pub fn new(support: Vec<Vec<i64>>, weights: Vec<f64>) -> Result<Self, EquilibriumError> {
        if support.len() != weights.len() {
            return Err(EquilibriumError::InvalidDistribution(
                "support and mass lengths differ".into(),
            ));
        }
        if support.is_empty() {
            return Err(EquilibriumError::InvalidDistribution("empty support".into()));
        }
        let d = support[0].len();
        if support.iter().any(|x| x.len() != d) {
            return Err(EquilibriumError::InvalidDistribution("mixed dimensions".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(EquilibriumError::InvalidDistribution(
                "masses must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(EquilibriumError::InvalidDistribution("total mass is zero".into()));
        }
        let mut pairs: Vec<(Vec<i64>, f64)> = support.into_iter().zip(weights).collect();
        pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(EquilibriumError::InvalidDistribution("duplicate support state".into()));
        }
        let (support, mass) = pairs.into_iter().map(|(x, w)| (x, w / total)).unzip();
        Ok(LatticeDistribution { support, mass })
    }

    pub fn point_mass(x: Vec<i64>) -> Self {
        LatticeDistribution {
            support: vec![x],
            mass: vec![1.0],
        }
    }

    /// Empirical law of the samples (which must be non-empty).
    pub fn empirical(samples: &[Vec<i64>]) -> Self {
        let (states, counts) = count_states(samples);
        Self::from_counts(states, &counts)
    }

    /// From sorted distinct states and positive counts.
    pub fn from_counts(states: Vec<Vec<i64>>, counts: &[u64]) -> Self {
        let total: u64 = counts.iter().sum();
        let mass = counts.iter().map(|&c| c as f64 / total as f64).collect();
        LatticeDistribution {
            support: states,
            mass,
        }
    }

    pub fn support(&self) -> &[Vec<i64>] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn prob(&self, x: &[i64]) -> f64 {
        self.support
            .binary_search_by(|s| s.as_slice().cmp(x))
            .map(|i| self.mass[i])
            .unwrap_or(0.0)
    }

    /// Mean in lattice units.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (x, p) in self.support.iter().zip(&self.mass) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += p * *xi as f64;
            }
        }
        m
    }

    /// `1/2 sum |p(x) - q(x)|` over the union of supports.
    pub fn tv_distance(&self, other: &LatticeDistribution) -> f64 {
        tv_sorted(&self.support, &self.mass, &other.support, &other.mass)
    }

    /// CSV with columns `x1..xd,mass`. Masses use shortest round-trip
    /// formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EquilibriumError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("mass".into());
        wr.write_record(&header).map_err(csv_err)?;
        for (x, p) in self.support.iter().zip(&self.mass) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(format!("{p:e}"));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| EquilibriumError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, EquilibriumError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut support = Vec::new();
        let mut mass = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let k = rec.len();
            if k < 2 {
                return Err(EquilibriumError::Csv("row needs coordinates and a mass".into()));
            }
            let x = (0..k - 1)
                .map(|i| rec[i].trim().parse::<i64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EquilibriumError::Csv(e.to_string()))?;
            let p = rec[k - 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| EquilibriumError::Csv(e.to_string()))?;
            support.push(x);
            mass.push(p);
        }
        Self::new(support, mass)
    }
}

fn csv_err(e: csv::Error) -> EquilibriumError {
    EquilibriumError::Csv(e.to_string())
}

/// TV between two laws given as sorted parallel arrays.
pub(crate) fn tv_sorted(sa: &[Vec<i64>], pa: &[f64], sb: &[Vec<i64>], pb: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let ord = match (sa.get(i), sb.get(j)) {
            (Some(a), Some(b)) => a.cmp(b),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                total += pa[i];
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                total += pb[j];
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                total += (pa[i] - pb[j]).abs();
                i += 1;
                j += 1;
            }
        }
    }
    (0.5 * total).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law(pairs: &[(i64, f64)]) -> LatticeDistribution {
        LatticeDistribution::new(
            pairs.iter().map(|p| vec![p.0]).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tv_reference_cases() {
        let p = law(&[(0, 0.5), (1, 0.5)]);
        let q = law(&[(0, 1.0)]);
        assert_eq!(p.tv_distance(&q), 0.5);
        assert_eq!(p.tv_distance(&p), 0.0);
        assert_eq!(law(&[(5, 1.0)]).tv_distance(&law(&[(6, 1.0)])), 1.0);
    }

    #[test]
    fn construction_validates_and_normalises() {
        assert!(LatticeDistribution::new(vec![vec![1], vec![1]], vec![1.0, 1.0]).is_err());
        assert!(LatticeDistribution::new(vec![vec![1]], vec![-1.0]).is_err());
        assert!(LatticeDistribution::new(vec![], vec![]).is_err());
        let p = LatticeDistribution::new(vec![vec![2], vec![0]], vec![3.0, 1.0]).unwrap();
        assert_eq!(p.support(), &[vec![0], vec![2]]);
        assert_eq!(p.mass(), &[0.25, 0.75]);
    }

    #[test]
    fn empirical_counts() {
        let s = vec![vec![1, 2], vec![0, 0], vec![1, 2], vec![1, 2]];
        let p = LatticeDistribution::empirical(&s);
        assert_eq!(p.support(), &[vec![0, 0], vec![1, 2]]);
        assert_eq!(p.mass(), &[0.25, 0.75]);
        assert_eq!(p.mean(), vec![0.75, 1.5]);
    }

    #[test]
    fn csv_round_trip() {
        let p = LatticeDistribution::new(
            vec![vec![0, -3], vec![4, 1], vec![2, 2]],
            vec![0.1, 0.2, 0.7000000000000001],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = LatticeDistribution::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p.support(), q.support());
        for (a, b) in p.mass().iter().zip(q.mass()) {
            assert!((a - b).abs() < 1e-16);
        }
    }

    fn arb_law() -> impl Strategy<Value = LatticeDistribution> {
        prop::collection::btree_map(-6i64..6, 0.01f64..1.0, 1..8).prop_map(|m| {
            let (s, w): (Vec<_>, Vec<_>) = m.into_iter().map(|(k, v)| (vec![k], v)).unzip();
            LatticeDistribution::new(s, w).unwrap()
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(p in arb_law(), q in arb_law(), r in arb_law()) {
            let pq = p.tv_distance(&q);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert!((pq - q.tv_distance(&p)).abs() < 1e-15);
            prop_assert!(p.tv_distance(&p) < 1e-15);
            prop_assert!(pq <= p.tv_distance(&r) + r.tv_distance(&q) + 1e-12);
        }

        #[test]
        fn masses_sum_to_one(p in arb_law()) {
            let s: f64 = p.mass().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.mass().iter().all(|&m| m >= 0.0));
        }
    }
}
