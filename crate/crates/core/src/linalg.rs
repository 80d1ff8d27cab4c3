//! Small dense linear algebra: Lyapunov solves, spectra, metrics.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix dimensions do not match")]
    Shape,
    #[error("lifted Lyapunov system is singular")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is not diagonalizable to working precision")]
    NotDiagonalizable,
}

/// Solve `a X + X a' + q = 0` through the Kronecker lifting
/// `(I (x) a + a (x) I) vec X = -vec q` (column-major `vec`).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let d = a.nrows();
    if a.ncols() != d || q.nrows() != d || q.ncols() != d {
        return Err(LinalgError::Shape);
    }
    let n = d * d;
    let mut k = DMatrix::<f64>::zeros(n, n);
    // Entry (i, j) of X sits at index i + d j.
    for j in 0..d {
        for i in 0..d {
            let row = i + d * j;
            for l in 0..d {
                // (a X)_{ij} = sum_l a_il X_lj
                k[(row, l + d * j)] += a[(i, l)];
                // (X a')_{ij} = sum_l X_il a_jl
                k[(row, i + d * l)] += a[(j, l)];
            }
        }
    }
    let rhs = DVector::from_iterator(n, (0..n).map(|idx| -q[(idx % d, idx / d)]));
    let lu = k.lu();
    let sol = lu.solve(&rhs).ok_or(LinalgError::Singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(DMatrix::from_fn(d, d, |i, j| sol[i + d * j]))
}

/// Max-abs entry of `a X + X a' + q`.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + q).amax()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues sorted by real part descending, then imaginary part
/// descending.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    ev
}

/// `max Re(lambda)`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `sqrt(x' M x)`.
#[inline]
pub fn quad_norm(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for k in 0..d {
        let mut row = 0.0;
        for i in 0..d {
            row += x[i] * m[(i, k)];
        }
        s += row * x[k];
    }
    s.max(0.0).sqrt()
}

/// Metric from a diagonalizing eigenbasis: `M = Re(P^-* P^-1)` where the
/// columns of `P` are eigenvectors of `a`. Then
/// `<x, a x>_M <= max Re(lambda) |x|_M^2`.
pub fn eigenbasis_metric(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let d = a.nrows();
    let ac: DMatrix<Complex<f64>> = a.map(|v| Complex::new(v, 0.0));
    let ev = eigenvalues(a);
    let scale = a.amax().max(1.0);
    let mut p = DMatrix::<Complex<f64>>::zeros(d, d);
    for (col, &lambda) in ev.iter().enumerate() {
        // Inverse iteration from a fixed generic start vector.
        let shift = lambda + Complex::new(1e-10 * scale, 1e-10 * scale);
        let shifted = &ac - DMatrix::<Complex<f64>>::identity(d, d) * shift;
        let lu = shifted.lu();
        let mut v = DVector::from_fn(d, |i, _| Complex::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
        for _ in 0..3 {
            v = lu.solve(&v).ok_or(LinalgError::NotDiagonalizable)?;
            let n = v.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(LinalgError::NotDiagonalizable);
            }
            v /= Complex::new(n, 0.0);
        }
        p.set_column(col, &v);
    }
    let pinv = p.try_inverse().ok_or(LinalgError::NotDiagonalizable)?;
    let cond = pinv.norm();
    if !cond.is_finite() || cond > 1e8 {
        return Err(LinalgError::NotDiagonalizable);
    }
    let m = pinv.adjoint() * &pinv;
    Ok(symmetrize(&m.map(|z| z.re)))
}
