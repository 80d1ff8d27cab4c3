//! Process definitions: jump vectors, rate expressions and the state-space
//! domain of a density-dependent Markov jump process.
//!
//! From state `X` the chain jumps to `X + J` at rate `N r_J(X / N)`. The
//! scaled drift is `F(y) = sum_J J r_J(y)`.

mod config;
pub mod expr;
pub mod lattice;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{parse_model, write_model};
pub use expr::{ExprError, Pos, RateExpr};
pub use lattice::{
    classify_jumps, decompose_vector, Decomposition, LatticeAnalysis, LatticeError, Verdict,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("jump at {pos} has {got} entries but dimension is {dim}")]
    DimensionMismatch { pos: Pos, got: usize, dim: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("point {point:?} lies outside the model domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("rate of jump {jump:?} is {value} at {point:?}; rates must be finite and non-negative")]
    BadRate {
        jump: Vec<i64>,
        value: f64,
        point: Vec<f64>,
    },
    #[error("derivative of rate for jump {jump:?} is not finite at {point:?}: {source}")]
    Derivative {
        jump: Vec<i64>,
        point: Vec<f64>,
        source: ExprError,
    },
}

/// Non-zero integer increment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JumpVector(Vec<i64>);

impl JumpVector {
    pub fn new(entries: Vec<i64>) -> Result<Self, ModelError> {
        if entries.is_empty() || entries.iter().all(|&e| e == 0) {
            return Err(ModelError::Invalid(format!(
                "jump vector {entries:?} must be non-empty and not all zero"
            )));
        }
        Ok(JumpVector(entries))
    }

    pub fn entries(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl fmt::Display for JumpVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Half-space `normal . y <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub bound: f64,
}

/// The closed set the scaled process lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// `y_i >= 0` for every coordinate.
    Orthant,
    /// Whole space.
    Everywhere,
    /// Axis-aligned box; infinite bounds allowed.
    Box(Vec<(f64, f64)>),
    /// Intersection of half-spaces.
    HalfSpaces(Vec<HalfSpace>),
}

impl Domain {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            Domain::Orthant => y.iter().all(|&v| v >= 0.0),
            Domain::Everywhere => y.iter().all(|v| v.is_finite()),
            Domain::Box(b) => y.iter().zip(b).all(|(&v, &(lo, hi))| v >= lo && v <= hi),
            Domain::HalfSpaces(hs) => hs
                .iter()
                .all(|h| h.normal.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() <= h.bound),
        }
    }

    /// Lattice variant used by the simulators: is `X / n` in the domain?
    #[inline]
    pub fn contains_lattice(&self, x: &[i64], n: f64) -> bool {
        match self {
            Domain::Orthant => x.iter().all(|&v| v >= 0),
            Domain::Everywhere => true,
            _ => {
                let y: Vec<f64> = x.iter().map(|&v| v as f64 / n).collect();
                self.contains(&y)
            }
        }
    }

    /// The domain as a list of half-spaces (empty for the whole space).
    pub fn half_spaces(&self, dim: usize) -> Vec<HalfSpace> {
        match self {
            Domain::Everywhere => Vec::new(),
            Domain::Orthant => (0..dim)
                .map(|i| {
                    let mut normal = vec![0.0; dim];
                    normal[i] = -1.0;
                    HalfSpace { normal, bound: 0.0 }
                })
                .collect(),
            Domain::Box(b) => {
                let mut out = Vec::new();
                for (i, &(lo, hi)) in b.iter().enumerate() {
                    if lo.is_finite() {
                        let mut normal = vec![0.0; dim];
                        normal[i] = -1.0;
                        out.push(HalfSpace { normal, bound: -lo });
                    }
                    if hi.is_finite() {
                        let mut normal = vec![0.0; dim];
                        normal[i] = 1.0;
                        out.push(HalfSpace { normal, bound: hi });
                    }
                }
                out
            }
            Domain::HalfSpaces(hs) => hs.clone(),
        }
    }
}

/// One transition type: increment and rate function.
#[derive(Debug, Clone)]
pub struct Jump {
    pub vector: JumpVector,
    pub rate: RateExpr,
}

/// A density-dependent jump process definition.
#[derive(Debug, Clone)]
pub struct Model {
    dim: usize,
    jumps: Vec<Jump>,
    params: BTreeMap<String, f64>,
    domain: Domain,
    jump_f64: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(
        dim: usize,
        jumps: Vec<Jump>,
        params: BTreeMap<String, f64>,
        domain: Domain,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::Invalid("dimension must be at least 1".into()));
        }
        if jumps.is_empty() {
            return Err(ModelError::Invalid("at least one jump is required".into()));
        }
        for (i, j) in jumps.iter().enumerate() {
            if j.vector.dim() != dim {
                return Err(ModelError::DimensionMismatch {
                    pos: Pos { line: 0, col: 0 },
                    got: j.vector.dim(),
                    dim,
                });
            }
            if jumps[..i].iter().any(|k| k.vector == j.vector) {
                return Err(ModelError::Invalid(format!(
                    "jump {} is listed twice",
                    j.vector
                )));
            }
        }
        match &domain {
            Domain::Box(b) if b.len() != dim => {
                return Err(ModelError::Invalid(format!(
                    "domain box has {} intervals, expected {dim}",
                    b.len()
                )))
            }
            Domain::HalfSpaces(hs) if hs.iter().any(|h| h.normal.len() != dim) => {
                return Err(ModelError::Invalid(
                    "half-space normal has the wrong dimension".into(),
                ))
            }
            _ => {}
        }
        let jump_f64 = jumps.iter().map(|j| j.vector.as_f64()).collect();
        Ok(Model {
            dim,
            jumps,
            params,
            domain,
            jump_f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn jump_vectors(&self) -> Vec<JumpVector> {
        self.jumps.iter().map(|j| j.vector.clone()).collect()
    }

    pub fn jump_f64(&self, k: usize) -> &[f64] {
        &self.jump_f64[k]
    }

    pub fn num_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn check_domain(&self, y: &[f64]) -> Result<(), ModelError> {
        if y.len() != self.dim {
            return Err(ModelError::Invalid(format!(
                "point has {} coordinates, model dimension is {}",
                y.len(),
                self.dim
            )));
        }
        if !self.domain.contains(y) {
            return Err(ModelError::OutsideDomain { point: y.to_vec() });
        }
        Ok(())
    }

    /// Rates without the domain check; `out.len()` must equal the number
    /// of jumps. Used by the simulators once the state is known to be valid.
    #[inline]
    pub fn rates_into(&self, y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        for (slot, jump) in out.iter_mut().zip(&self.jumps) {
            let r = jump.rate.eval(y);
            if !(r.is_finite() && r >= 0.0) {
                return Err(ModelError::BadRate {
                    jump: jump.vector.entries().to_vec(),
                    value: r,
                    point: y.to_vec(),
                });
            }
            *slot = r;
        }
        Ok(())
    }

    /// `r_J(y)` for every jump, in jump order.
    pub fn eval_rates(&self, y: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_domain(y)?;
        let mut out = vec![0.0; self.jumps.len()];
        self.rates_into(y, &mut out)?;
        Ok(out)
    }

    /// `F(y) = sum_J J r_J(y)`.
    pub fn eval_drift(&self, y: &[f64]) -> Result<Vec<f64>, ModelError> {
        let rates = self.eval_rates(y)?;
        Ok(self.drift_from_rates(&rates))
    }

    /// Drift by raw expression evaluation: no domain or sign checks. For
    /// intermediate integrator stages that may sit just outside the domain.
    pub fn drift_unchecked(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (jump, jv) in self.jumps.iter().zip(&self.jump_f64) {
            let r = jump.rate.eval(y);
            for (o, j) in out.iter_mut().zip(jv) {
                *o += j * r;
            }
        }
    }

    pub fn drift_from_rates(&self, rates: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        for (jv, r) in self.jump_f64.iter().zip(rates) {
            for (fi, ji) in f.iter_mut().zip(jv) {
                *fi += ji * r;
            }
        }
        f
    }

    /// Gradient row of every rate, `grads[k][i] = d r_k / d y_i`.
    pub fn rate_gradients(&self, y: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_domain(y)?;
        self.jumps
            .iter()
            .map(|j| {
                j.rate.gradient(y).map_err(|source| ModelError::Derivative {
                    jump: j.vector.entries().to_vec(),
                    point: y.to_vec(),
                    source,
                })
            })
            .collect()
    }

    /// `DF(y) = sum_J J grad r_J(y)`.
    pub fn eval_jacobian(&self, y: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let grads = self.rate_gradients(y)?;
        let mut a = DMatrix::zeros(self.dim, self.dim);
        for (jv, g) in self.jump_f64.iter().zip(&grads) {
            for i in 0..self.dim {
                if jv[i] == 0.0 {
                    continue;
                }
                for k in 0..self.dim {
                    a[(i, k)] += jv[i] * g[k];
                }
            }
        }
        Ok(a)
    }

    /// True when every rate is affine in `y` (constant gradients).
    pub fn is_affine(&self) -> bool {
        self.jumps.iter().all(|j| j.rate.is_affine())
    }
}

/// The SIR epidemic with immigration of susceptibles: infection
/// `(-1, 1)` at `alpha y1 y2`, immigration `(1, 0)` at `beta`, recovery
/// `(0, -1)` at `gamma y2`.
pub fn builtin_hamer_sir(alpha: f64, beta: f64, gamma: f64) -> Result<Model, ModelError> {
    for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "{name} must be a positive finite number, got {v}"
            )));
        }
    }
    parse_model(&hamer_sir_config(alpha, beta, gamma))
}

/// Config text for the built-in SIR model.
pub fn hamer_sir_config(alpha: f64, beta: f64, gamma: f64) -> String {
    format!(
        "# SIR epidemic with immigration of susceptibles\n\
         dimension = 2\n\
         \n\
         [params]\n\
         alpha = {alpha:?}\n\
         beta = {beta:?}\n\
         gamma = {gamma:?}\n\
         \n\
         [jumps]\n\
         (-1, 1) : alpha * x1 * x2\n\
         (1, 0)  : beta\n\
         (0, -1) : gamma * x2\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sir() -> Model {
        builtin_hamer_sir(2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn sir_rates_at_reference_points() {
        let m = sir();
        assert_eq!(m.eval_rates(&[0.5, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(m.eval_rates(&[0.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(m.eval_rates(&[1.0, 1.0]).unwrap(), vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn sir_drift_at_reference_points() {
        let m = sir();
        assert_eq!(m.eval_drift(&[0.5, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.eval_drift(&[1.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn sir_jacobian_at_fixed_point() {
        let m = sir();
        let a = m.eval_jacobian(&[0.5, 1.0]).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[-2.0, -1.0, 2.0, 0.0]));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let m = sir();
        let y = [1.0, 1.0];
        let a = m.eval_jacobian(&y).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut yp = y;
            let mut ym = y;
            yp[k] += h;
            ym[k] -= h;
            let fp = m.eval_drift(&yp).unwrap();
            let fm = m.eval_drift(&ym).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert_relative_eq!(a[(i, k)], fd, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn constant_rates_have_zero_jacobian() {
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 1\n(-1) : 2\n").unwrap();
        assert!(m.is_affine());
        assert_eq!(m.eval_jacobian(&[3.0]).unwrap(), DMatrix::zeros(1, 1));
        let m = parse_model("dimension = 2\n[jumps]\n(1, 0) : 0\n(0, 1) : 0\n").unwrap();
        assert_eq!(m.eval_drift(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rates_outside_domain_or_negative_are_errors() {
        let m = sir();
        assert!(matches!(
            m.eval_rates(&[-0.1, 1.0]),
            Err(ModelError::OutsideDomain { .. })
        ));
        let m = parse_model(
            "dimension = 1\n[jumps]\n(1) : 1 - x1\n(-1) : x1\n[domain]\neverywhere\n",
        )
        .unwrap();
        assert!(matches!(m.eval_rates(&[2.0]), Err(ModelError::BadRate { .. })));
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 1 / x1\n").unwrap();
        assert!(matches!(m.eval_rates(&[0.0]), Err(ModelError::BadRate { .. })));
        assert!(matches!(
            m.eval_jacobian(&[0.0]),
            Err(ModelError::Derivative { .. })
        ));
    }

    #[test]
    fn builtin_requires_positive_parameters() {
        assert!(builtin_hamer_sir(0.0, 1.0, 1.0).is_err());
        assert!(builtin_hamer_sir(1.0, -1.0, 1.0).is_err());
        let m = builtin_hamer_sir(1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.eval_drift(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.num_jumps(), 3);
    }

    #[test]
    fn domain_half_spaces_agree_with_contains() {
        let dom = Domain::Box(vec![(0.0, 1.0), (f64::NEG_INFINITY, 2.0)]);
        let hs = Domain::HalfSpaces(dom.half_spaces(2));
        for y in [[0.5, 1.0], [1.5, 0.0], [0.5, 3.0], [-0.1, -5.0], [1.0, 2.0]] {
            assert_eq!(dom.contains(&y), hs.contains(&y), "{y:?}");
        }
    }

    #[test]
    fn jump_vectors_must_be_nonzero_and_distinct() {
        assert!(JumpVector::new(vec![0, 0]).is_err());
        let r = parse_model("dimension = 1\n[jumps]\n(1) : 1\n(1) : 2\n");
        assert!(r.is_err());
    }
}
