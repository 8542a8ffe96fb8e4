//! Gamma-family special functions used by the density and the M-steps.

pub use statrs::function::gamma::{digamma, ln_gamma};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic series in 1/x with Bernoulli-number coefficients.
    let series = inv
        + 0.5 * inv2
        + inv * inv2
            * (1.0 / 6.0
                + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * 5.0 / 66.0))));
    acc + series
}

/// Solves ψ(α) = target for α > 0.
///
/// Starts from the usual closed-form approximation of the inverse digamma
/// and polishes with Newton steps using the trigamma derivative. ψ is
/// strictly increasing on (0, ∞), so the root is unique.
pub fn inverse_digamma(target: f64) -> Option<f64> {
    if !target.is_finite() {
        return None;
    }
    let mut alpha = if target >= -2.22 {
        target.exp() + 0.5
    } else {
        -1.0 / (target + EULER_GAMMA)
    };
    for _ in 0..100 {
        let f = digamma(alpha) - target;
        let step = f / trigamma(alpha);
        let mut next = alpha - step;
        if next <= 0.0 {
            next = alpha / 10.0;
        }
        let done = (next - alpha).abs() <= 1e-12 * alpha.max(f64::MIN_POSITIVE);
        alpha = next;
        if done {
            return Some(alpha);
        }
    }
    let residual = (digamma(alpha) - target).abs();
    (residual < 1e-10 * target.abs().max(1.0)).then_some(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn trigamma_known_values() {
        assert_relative_eq!(trigamma(1.0), PI * PI / 6.0, max_relative = 1e-13);
        assert_relative_eq!(trigamma(0.5), PI * PI / 2.0, max_relative = 1e-13);
        // ψ'(x) - ψ'(x+1) = 1/x²
        for &x in &[1e-6, 0.01, 0.3, 2.5, 17.0, 400.0] {
            assert_relative_eq!(trigamma(x) - trigamma(x + 1.0), 1.0 / (x * x), max_relative = 1e-10);
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.05, 0.7, 3.0, 40.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(trigamma(x), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn inverse_digamma_roundtrip() {
        for &a in &[1e-4, 0.02, 0.5, 1.0, 7.9, 250.0, 1e5] {
            let t = digamma(a);
            let back = inverse_digamma(t).unwrap();
            assert_relative_eq!(back, a, max_relative = 1e-10);
        }
        assert!(inverse_digamma(f64::NAN).is_none());
    }
}
