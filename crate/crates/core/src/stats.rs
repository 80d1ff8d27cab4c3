//! Small statistical helpers shared by the Monte Carlo checks.

/// Two-sided standard normal quantile at 99%.
pub const Z99: f64 = 2.5758293035489004;

/// Wilson score interval for `k` successes in `n` trials at normal quantile
/// `z`. Returns `(0, 1)` for `n = 0`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // k = 5, n = 100, z = 1.96: (0.02154, 0.11175) to 5 digits.
        let (lo, hi) = wilson_interval(5, 100, 1.96);
        assert!((lo - 0.021543).abs() < 1e-5, "{lo}");
        assert!((hi - 0.111752).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(0, 50, Z99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.15);
        assert_eq!(wilson_interval(0, 0, Z99), (0.0, 1.0));
    }

    #[test]
    fn mean_se_of_constant_sample() {
        assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
