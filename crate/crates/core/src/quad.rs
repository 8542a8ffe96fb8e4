//! Double-exponential (tanh-sinh) quadrature on the unit interval, carried
//! out in log space.
//!
//! The substitution `x = 1 / (1 + exp(-π sinh t))` maps `t ∈ ℝ` onto
//! `(0, 1)` with weight `dx/dt = π cosh t · x (1 - x)`. Both `ln x` and
//! `ln(1 - x)` are tabulated without cancellation, so integrands with
//! algebraic or logarithmic endpoint singularities can be evaluated
//! arbitrarily close to either end. Levels halve the step and reuse all
//! previous nodes.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const FIRST_STEP: f64 = 0.5;
const T_LIMIT: f64 = 10.0;
const LEVEL_CAP: usize = 16;
const MIN_LEVEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    DoubleExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub relative_tolerance: f64,
    pub max_levels: usize,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            max_levels: 12,
            scheme: QuadratureScheme::DoubleExponential,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0 && self.relative_tolerance <= 1e-4) {
            return Err(Error::InvalidParameter(format!(
                "quadrature relative_tolerance must lie in (0, 1e-4], got {}",
                self.relative_tolerance
            )));
        }
        if self.max_levels < 4 || self.max_levels > LEVEL_CAP {
            return Err(Error::InvalidParameter(format!(
                "quadrature max_levels must lie in [4, {LEVEL_CAP}], got {}",
                self.max_levels
            )));
        }
        Ok(())
    }
}

/// A tabulated abscissa of the unit-interval transform.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    pub t: f64,
    pub x: f64,
    pub one_minus_x: f64,
    pub ln_x: f64,
    pub ln_one_minus_x: f64,
    pub ln_weight: f64,
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

impl Node {
    fn at(t: f64) -> Self {
        let u = PI * t.sinh();
        let ln_x = -softplus(-u);
        let ln_one_minus_x = -softplus(u);
        // ln cosh t without overflow
        let ln_cosh = t.abs() + (-2.0 * t.abs()).exp().ln_1p() - std::f64::consts::LN_2;
        Node {
            t,
            x: ln_x.exp(),
            one_minus_x: ln_one_minus_x.exp(),
            ln_x,
            ln_one_minus_x,
            ln_weight: PI.ln() + ln_cosh + ln_x + ln_one_minus_x,
        }
    }
}

const EMPTY_LEVEL: OnceLock<Vec<Node>> = OnceLock::new();
static LEVELS: [OnceLock<Vec<Node>>; LEVEL_CAP + 1] = [EMPTY_LEVEL; LEVEL_CAP + 1];

fn step(level: usize) -> f64 {
    FIRST_STEP / (1u64 << level) as f64
}

/// Nodes first introduced at `level`, sorted by |t|.
pub(crate) fn level_nodes(level: usize) -> &'static [Node] {
    LEVELS[level].get_or_init(|| {
        let h = step(level);
        let count = (T_LIMIT / h).floor() as i64;
        let mut nodes = Vec::new();
        for k in 0..=count {
            if level > 0 && k % 2 == 0 {
                continue;
            }
            let t = k as f64 * h;
            nodes.push(Node::at(t));
            if k != 0 {
                nodes.push(Node::at(-t));
            }
        }
        nodes
    })
}

/// Truncation point in `t` for an integrand whose endpoint behaviour is
/// `x^decay` (or `(1-x)^decay`) after the weight is included.
pub(crate) fn t_max_for_decay(decay: f64) -> f64 {
    if !(decay > 0.0) {
        return T_LIMIT;
    }
    let u = 60.0 / decay;
    (u / PI).asinh().clamp(3.0, T_LIMIT)
}

/// Result of a log-space quadrature with `M` auxiliary weighted integrals.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogQuadrature<const M: usize> {
    /// ln ∫₀¹ g(x) dx
    pub ln_integral: f64,
    /// ∫ g·hⱼ / ∫ g for each auxiliary factor hⱼ.
    pub ratios: [f64; M],
    #[allow(dead_code)]
    pub levels: usize,
}

struct Running<const M: usize> {
    shift: f64,
    base: f64,
    aux: [f64; M],
    aux_abs: [f64; M],
}

impl<const M: usize> Running<M> {
    fn absorb(&mut self, level_max: f64, base: f64, aux: &[f64; M], aux_abs: &[f64; M]) {
        if level_max == f64::NEG_INFINITY {
            return;
        }
        if level_max > self.shift {
            let scale = (self.shift - level_max).exp();
            self.base *= scale;
            for j in 0..M {
                self.aux[j] *= scale;
                self.aux_abs[j] *= scale;
            }
            self.shift = level_max;
        }
        let scale = (level_max - self.shift).exp();
        self.base += base * scale;
        for j in 0..M {
            self.aux[j] += aux[j] * scale;
            self.aux_abs[j] += aux_abs[j] * scale;
        }
    }
}

/// Integrates `exp(ln_g(x))` over `(0, 1)` together with the weighted
/// integrals of `exp(ln_g(x)) · hⱼ(x)`.
///
/// `integrand` receives a node and returns `(ln g, [h₀, …, h_{M-1}])`.
/// `t_left`/`t_right` bound the abscissae on each side.
pub(crate) fn integrate_unit<const M: usize, F>(
    cfg: &QuadratureConfig,
    t_left: f64,
    t_right: f64,
    mut integrand: F,
) -> Result<LogQuadrature<M>>
where
    F: FnMut(&Node) -> (f64, [f64; M]),
{
    let tol = cfg.relative_tolerance;
    let mut run = Running {
        shift: f64::NEG_INFINITY,
        base: 0.0,
        aux: [0.0; M],
        aux_abs: [0.0; M],
    };
    let mut scratch: Vec<(f64, [f64; M])> = Vec::with_capacity(256);
    let mut previous: Option<(f64, [f64; M])> = None;
    let mut last_error = f64::INFINITY;

    for level in 0..=cfg.max_levels {
        scratch.clear();
        let mut level_max = f64::NEG_INFINITY;
        for node in level_nodes(level) {
            if node.t > t_right || -node.t > t_left {
                continue;
            }
            let (ln_g, h) = integrand(node);
            let ln_c = node.ln_weight + ln_g;
            if ln_c.is_nan() {
                return Err(Error::Quadrature {
                    estimate: f64::NAN,
                    error_bound: f64::NAN,
                });
            }
            if ln_c > level_max {
                level_max = ln_c;
            }
            scratch.push((ln_c, h));
        }
        let mut base = 0.0;
        let mut aux = [0.0; M];
        let mut aux_abs = [0.0; M];
        if level_max > f64::NEG_INFINITY {
            for (ln_c, h) in &scratch {
                let c = (ln_c - level_max).exp();
                base += c;
                for j in 0..M {
                    aux[j] += c * h[j];
                    aux_abs[j] += c * h[j].abs();
                }
            }
        }
        run.absorb(level_max, base, &aux, &aux_abs);

        if !(run.base > 0.0) {
            continue;
        }
        let ln_integral = run.shift + (run.base * step(level)).ln();
        let mut ratios = [0.0; M];
        for j in 0..M {
            ratios[j] = run.aux[j] / run.base;
        }
        if let Some((prev_ln, prev_ratios)) = previous {
            let mut err = (ln_integral - prev_ln).exp_m1().abs();
            let mut ok = err <= tol;
            for j in 0..M {
                let scale = run.aux_abs[j] / run.base;
                let e = (ratios[j] - prev_ratios[j]).abs();
                if scale > 0.0 {
                    err = err.max(e / scale);
                }
                ok &= e <= tol * scale;
            }
            last_error = err;
            if ok && level >= MIN_LEVEL {
                return Ok(LogQuadrature {
                    ln_integral,
                    ratios,
                    levels: level,
                });
            }
        }
        previous = Some((ln_integral, ratios));
    }
    Err(Error::Quadrature {
        estimate: previous.map_or(f64::NAN, |p| p.0),
        error_bound: last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;
    use approx::assert_relative_eq;

    fn ln_beta(a: f64, b: f64) -> f64 {
        ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
    }

    #[test]
    fn beta_integrals_with_endpoint_singularities() {
        let cfg = QuadratureConfig::default();
        for &(a, b) in &[(1.0, 1.0), (0.5, 0.5), (0.1, 3.0), (4.0, 0.2), (7.5, 12.0)] {
            let tl = t_max_for_decay(a);
            let tr = t_max_for_decay(b);
            let q = integrate_unit::<1, _>(&cfg, tl, tr, |n| {
                ((a - 1.0) * n.ln_x + (b - 1.0) * n.ln_one_minus_x, [n.x])
            })
            .unwrap();
            assert_relative_eq!(q.ln_integral, ln_beta(a, b), max_relative = 1e-10, epsilon = 1e-13);
            assert_relative_eq!(q.ratios[0], a / (a + b), max_relative = 1e-9);
        }
    }

    #[test]
    fn log_moment_of_beta() {
        // E[ln X] for X ~ Beta(a, b) is ψ(a) − ψ(a+b)
        use crate::special::digamma;
        let cfg = QuadratureConfig::default();
        let (a, b) = (0.3, 2.0);
        let q = integrate_unit::<1, _>(&cfg, t_max_for_decay(a), t_max_for_decay(b), |n| {
            ((a - 1.0) * n.ln_x + (b - 1.0) * n.ln_one_minus_x, [n.ln_x])
        })
        .unwrap();
        assert_relative_eq!(q.ratios[0], digamma(a) - digamma(a + b), max_relative = 1e-9);
    }

    #[test]
    fn huge_exponent_stays_finite() {
        // ∫ exp(1000 x) dx = (e^1000 − 1)/1000
        let cfg = QuadratureConfig::default();
        let q = integrate_unit::<0, _>(&cfg, 4.0, 4.0, |n| (1000.0 * n.x, [])).unwrap();
        let expected = 1000.0 - 1000f64.ln();
        assert_relative_eq!(q.ln_integral, expected, max_relative = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            relative_tolerance: 1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig {
            max_levels: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn nonconvergence_reports_estimate() {
        let cfg = QuadratureConfig {
            relative_tolerance: 1e-14,
            max_levels: 4,
            ..Default::default()
        };
        // rapid oscillation is not resolved by four levels
        let err = integrate_unit::<0, _>(&cfg, 10.0, 10.0, |n| ((2.0 + (400.0 * n.x).sin()).ln(), []))
            .unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
