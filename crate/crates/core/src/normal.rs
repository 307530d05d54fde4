//! Standard normal helpers and truncated-normal moments.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `erfc` loses relative precision; asymptotic series take over.
const TAIL: f64 = -35.0;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of [`cdf`] on (0, 1), polished by one Halley step.
pub fn ppf(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    let d = pdf(x);
    if d <= 0.0 {
        return x;
    }
    let e = (cdf(x) - p) / d;
    x - e / (1.0 + 0.5 * x * e)
}

fn tail_series(x: f64) -> f64 {
    let x2 = x * x;
    1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
}

/// `ln Φ(x)`, accurate deep into the lower tail.
pub fn log_cdf(x: f64) -> f64 {
    if x >= TAIL {
        cdf(x).ln()
    } else {
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + tail_series(x).ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn inv_mills(x: f64) -> f64 {
    if x >= TAIL {
        (-0.5 * x * x - LN_SQRT_2PI - log_cdf(x)).exp()
    } else {
        -x / tail_series(x)
    }
}

/// Mean and variance of `N(mean, sd²)` truncated to `(-∞, 0)`.
pub fn truncated_below_zero_moments(mean: f64, sd: f64) -> (f64, f64) {
    let beta = -mean / sd;
    let r = inv_mills(beta);
    let m = mean - sd * r;
    let v = sd * sd * (1.0 - beta * r - r * r);
    (m, v.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-15);
        assert!((cdf(-3.0) / 0.001_349_898_031_630_094_6 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-8, 0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((cdf(ppf(p)) - p).abs() < 1e-14 * p.max(1e-3));
        }
    }

    #[test]
    fn log_cdf_is_continuous_across_the_tail_switch() {
        let below = log_cdf(TAIL - 1e-9);
        let above = log_cdf(TAIL + 1e-9);
        assert!((below - above).abs() < 1e-6);
        assert!(log_cdf(-100.0).is_finite());
    }

    #[test]
    fn inv_mills_limits() {
        assert!((inv_mills(0.0) - 2.0 * pdf(0.0)).abs() < 1e-14);
        assert!((inv_mills(-50.0) - 50.02).abs() < 0.01);
        assert!(inv_mills(40.0) < 1e-300);
    }

    #[test]
    fn half_normal_moments() {
        let (m, v) = truncated_below_zero_moments(0.0, 1.0);
        assert!((m + (2.0 / PI).sqrt()).abs() < 1e-14);
        assert!((v - (1.0 - 2.0 / PI)).abs() < 1e-14);
    }
}
