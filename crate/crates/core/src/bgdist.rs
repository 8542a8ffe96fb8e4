//! The bivariate gamma distribution built by trivariate reduction:
//! `Y = (X1 + X3, X2 + X3)` with independent `Xk ~ Gamma(αk, β)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::quad::{integrate_unit, t_max_for_decay, QuadratureConfig};
use crate::special::ln_gamma;

/// Smallest admissible shared shape. Γ(α3) diverges as α3 → 0.
pub const ALPHA3_FLOOR: f64 = 1e-8;

/// Shapes and common rate of one bivariate gamma component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BGParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta: f64,
}

impl BGParams {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64, beta: f64) -> Result<Self> {
        let p = Self {
            alpha1,
            alpha2,
            alpha3,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("beta", self.beta),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.alpha3 <= ALPHA3_FLOOR {
            return Err(Error::InvalidParameter(format!(
                "alpha3 = {} is at or below the floor {ALPHA3_FLOOR}",
                self.alpha3
            )));
        }
        Ok(())
    }

    /// Mean of `Y1 + Y2`.
    pub fn total_mean(&self) -> f64 {
        (self.alpha1 + self.alpha2 + 2.0 * self.alpha3) / self.beta
    }
}

/// Mean vector and covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Posterior expectations of the latent gamma variables given `(y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub e_x3: f64,
    pub e_x1: f64,
    pub e_x2: f64,
    pub e_log_x3: f64,
    pub e_log_x1: f64,
    pub e_log_x2: f64,
}

fn check_point(y1: f64, y2: f64) -> Result<()> {
    if !(y1 > 0.0 && y1.is_finite() && y2 > 0.0 && y2.is_finite()) {
        return Err(Error::Domain(format!(
            "responses must be positive and finite, got ({y1}, {y2})"
        )));
    }
    Ok(())
}

fn ln_prefactor(y1: f64, y2: f64, p: &BGParams) -> f64 {
    (p.alpha1 + p.alpha2 + p.alpha3) * p.beta.ln()
        - p.beta * (y1 + y2)
        - ln_gamma(p.alpha1)
        - ln_gamma(p.alpha2)
        - ln_gamma(p.alpha3)
}

/// Geometry of the latent integral after substituting `x3 = m·x`.
struct Integral {
    m: f64,
    ln_m: f64,
    // y_k − m, zero for the coordinate attaining the minimum
    gap1: f64,
    gap2: f64,
    t_left: f64,
    t_right: f64,
}

impl Integral {
    fn new(y1: f64, y2: f64, p: &BGParams) -> Result<Self> {
        let m = y1.min(y2);
        let gap1 = y1 - m;
        let gap2 = y2 - m;
        let right_decay = match (gap1 == 0.0, gap2 == 0.0) {
            (true, true) => p.alpha1 + p.alpha2 - 1.0,
            (true, false) => p.alpha1,
            _ => p.alpha2,
        };
        if right_decay <= 0.0 {
            return Err(Error::Domain(format!(
                "density is unbounded on the diagonal y1 = y2 when alpha1 + alpha2 <= 1 \
                 (alpha1 = {}, alpha2 = {})",
                p.alpha1, p.alpha2
            )));
        }
        Ok(Self {
            m,
            ln_m: m.ln(),
            gap1,
            gap2,
            t_left: t_max_for_decay(p.alpha3),
            t_right: t_max_for_decay(right_decay),
        })
    }

    #[inline]
    fn ln_remainders(&self, node: &crate::quad::Node) -> (f64, f64) {
        // ln(y_k − m x) = ln(gap_k + m (1 − x))
        let l1 = if self.gap1 == 0.0 {
            self.ln_m + node.ln_one_minus_x
        } else {
            (self.gap1 + self.m * node.one_minus_x).ln()
        };
        let l2 = if self.gap2 == 0.0 {
            self.ln_m + node.ln_one_minus_x
        } else {
            (self.gap2 + self.m * node.one_minus_x).ln()
        };
        (l1, l2)
    }
}

/// `ln f(y1, y2)`, the latent `x3` integral evaluated by double-exponential
/// quadrature in log space.
pub fn log_density(y1: f64, y2: f64, p: &BGParams, q: &QuadratureConfig) -> Result<f64> {
    check_point(y1, y2)?;
    p.validate()?;
    let geo = Integral::new(y1, y2, p)?;
    let (a1, a2, a3) = (p.alpha1 - 1.0, p.alpha2 - 1.0, p.alpha3 - 1.0);
    let bm = p.beta * geo.m;
    let res = integrate_unit::<0, _>(q, geo.t_left, geo.t_right, |node| {
        let (l1, l2) = geo.ln_remainders(node);
        (a3 * (geo.ln_m + node.ln_x) + a1 * l1 + a2 * l2 + bm * node.x, [])
    })?;
    Ok(ln_prefactor(y1, y2, p) + geo.ln_m + res.ln_integral)
}

/// Single quadrature pass returning the log density together with the
/// conditional moments. `E[X3 | y]` is the ratio
/// `(α3/β)·f(y; α3+1)/f(y; α3)` with both densities integrated on one
/// shared node set, which reduces to the `x3`-weighted integral.
pub(crate) fn density_and_moments(
    y1: f64,
    y2: f64,
    p: &BGParams,
    q: &QuadratureConfig,
) -> Result<(f64, ConditionalMoments)> {
    check_point(y1, y2)?;
    p.validate()?;
    let geo = Integral::new(y1, y2, p)?;
    let (a1, a2, a3) = (p.alpha1 - 1.0, p.alpha2 - 1.0, p.alpha3 - 1.0);
    let bm = p.beta * geo.m;
    let res = integrate_unit::<4, _>(q, geo.t_left, geo.t_right, |node| {
        let (l1, l2) = geo.ln_remainders(node);
        let l3 = geo.ln_m + node.ln_x;
        (
            a3 * l3 + a1 * l1 + a2 * l2 + bm * node.x,
            [node.x, l3, l1, l2],
        )
    })?;
    let ln_f = ln_prefactor(y1, y2, p) + geo.ln_m + res.ln_integral;
    let e_x3 = (geo.m * res.ratios[0]).clamp(f64::MIN_POSITIVE, geo.m * (1.0 - f64::EPSILON));
    Ok((
        ln_f,
        ConditionalMoments {
            e_x3,
            e_x1: y1 - e_x3,
            e_x2: y2 - e_x3,
            e_log_x3: res.ratios[1],
            e_log_x1: res.ratios[2],
            e_log_x2: res.ratios[3],
        },
    ))
}

/// `E[X3 | y]` by the two independent routes: the ratio identity
/// `(α3/β)·f(y; α3+1)/f(y; α3)` with each density integrated on its own,
/// and direct quadrature of the `x3`-weighted integrand.
pub fn latent_mean_routes(y1: f64, y2: f64, p: &BGParams, q: &QuadratureConfig) -> Result<(f64, f64)> {
    let shifted = BGParams {
        alpha3: p.alpha3 + 1.0,
        ..*p
    };
    let ratio = ((p.alpha3 / p.beta).ln() + log_density(y1, y2, &shifted, q)? - log_density(y1, y2, p, q)?).exp();
    let (_, cm) = density_and_moments(y1, y2, p, q)?;
    Ok((ratio, cm.e_x3))
}

/// Conditional expectations of `X1, X2, X3` and their logarithms given
/// an observed pair. Both routes to `E[X3 | y]` are computed and must
/// agree to 1e-8 relative; the ratio form is returned.
pub fn conditional_moments(y1: f64, y2: f64, p: &BGParams, q: &QuadratureConfig) -> Result<ConditionalMoments> {
    let (_, mut cm) = density_and_moments(y1, y2, p, q)?;
    let shifted = BGParams {
        alpha3: p.alpha3 + 1.0,
        ..*p
    };
    let ln_ratio = (p.alpha3 / p.beta).ln() + log_density(y1, y2, &shifted, q)? - log_density(y1, y2, p, q)?;
    let ratio = ln_ratio.exp();
    if ((ratio - cm.e_x3) / ratio).abs() > 1e-8 {
        return Err(Error::Quadrature {
            estimate: ratio,
            error_bound: (ratio - cm.e_x3).abs(),
        });
    }
    let m = y1.min(y2);
    let e_x3 = ratio.min(m * (1.0 - f64::EPSILON));
    cm.e_x3 = e_x3;
    cm.e_x1 = y1 - e_x3;
    cm.e_x2 = y2 - e_x3;
    Ok(cm)
}

/// Analytic mean and covariance.
pub fn moments(p: &BGParams) -> Moments {
    let b2 = p.beta * p.beta;
    Moments {
        mean: [(p.alpha1 + p.alpha3) / p.beta, (p.alpha2 + p.alpha3) / p.beta],
        cov: [
            [(p.alpha1 + p.alpha3) / b2, p.alpha3 / b2],
            [p.alpha3 / b2, (p.alpha2 + p.alpha3) / b2],
        ],
    }
}

/// Draws one pair from `rng`.
pub fn draw<R: Rng + ?Sized>(p: &BGParams, rng: &mut R) -> (f64, f64) {
    let scale = 1.0 / p.beta;
    // Shapes and scale are validated positive, so construction cannot fail.
    let g = |shape: f64| Gamma::new(shape, scale).expect("validated gamma parameters");
    let x1: f64 = g(p.alpha1).sample(rng);
    let x2: f64 = g(p.alpha2).sample(rng);
    let x3: f64 = g(p.alpha3).sample(rng);
    (x1 + x3, x2 + x3)
}

/// `n` draws, reproducible given `seed`.
pub fn sample(p: &BGParams, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    p.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw(p, &mut rng)).collect())
}

/// Monte-Carlo estimate of a square-window probability and its
/// independence counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectProb {
    /// `P(c1 ≤ Y1 ≤ c2, c1 ≤ Y2 ≤ c2)`
    pub joint: f64,
    /// `P(c1 ≤ Y1 ≤ c2) · P(c1 ≤ Y2 ≤ c2)`
    pub product: f64,
    /// Standard error of `joint − product` (delta method).
    pub std_error: f64,
}

pub fn joint_rect_prob_mc(p: &BGParams, c1: f64, c2: f64, n: usize, seed: u64) -> Result<RectProb> {
    p.validate()?;
    if !(c1 >= 0.0 && c1 < c2) {
        return Err(Error::InvalidParameter(format!(
            "window requires 0 <= c1 < c2, got [{c1}, {c2}]"
        )));
    }
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "at least 10^4 draws required, got {n}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inside = |v: f64| v >= c1 && v <= c2;
    let mut flags = Vec::with_capacity(n);
    let (mut na, mut nb, mut nab) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let (y1, y2) = draw(p, &mut rng);
        let (a, b) = (inside(y1), inside(y2));
        na += a as usize;
        nb += b as usize;
        nab += (a && b) as usize;
        flags.push((a, b));
    }
    let nf = n as f64;
    let (pa, pb, pab) = (na as f64 / nf, nb as f64 / nf, nab as f64 / nf);
    // influence function of pab − pa·pb
    let mean_psi = pab - 2.0 * pa * pb;
    let var = flags
        .iter()
        .map(|&(a, b)| {
            let psi = (a && b) as u8 as f64 - pb * a as u8 as f64 - pa * b as u8 as f64;
            (psi - mean_psi).powi(2)
        })
        .sum::<f64>()
        / (nf - 1.0);
    Ok(RectProb {
        joint: pab,
        product: pa * pb,
        std_error: (var / nf).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BGParams::new(1.0, 1.0, 1e-9, 1.0).is_err());
        assert!(BGParams::new(1.0, 1.0, ALPHA3_FLOOR, 1.0).is_err());
        assert!(BGParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BGParams::new(1.0, f64::INFINITY, 1.0, 1.0).is_err());
        assert!(BGParams::new(1.0, 1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn rejects_non_positive_responses() {
        let p = BGParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(log_density(0.0, 1.0, &p, &q()), Err(Error::Domain(_))));
        assert!(matches!(log_density(1.0, -3.0, &p, &q()), Err(Error::Domain(_))));
    }

    #[test]
    fn symmetry_under_coordinate_swap() {
        for &(a, a3, b) in &[(0.7, 2.0, 1.3), (3.0, 0.4, 0.2), (1.0, 1.0, 1.0)] {
            let p = BGParams::new(a, a, a3, b).unwrap();
            let l = log_density(1.0, 2.0, &p, &q()).unwrap();
            let r = log_density(2.0, 1.0, &p, &q()).unwrap();
            assert_relative_eq!(l, r, max_relative = 1e-10);
        }
        let p = BGParams::new(0.8, 7.9, 5.0, 1.9).unwrap();
        let swapped = BGParams::new(7.9, 0.8, 5.0, 1.9).unwrap();
        assert_relative_eq!(
            log_density(1.5, 2.5, &p, &q()).unwrap(),
            log_density(2.5, 1.5, &swapped, &q()).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn scale_change_of_variables() {
        let p = BGParams::new(0.8, 7.9, 5.0, 1.9).unwrap();
        for &c in &[0.01, 0.5, 3.0, 1e4] {
            let scaled = BGParams { beta: p.beta / c, ..p };
            let lhs = log_density(1.5, 2.5, &p, &q()).unwrap();
            let rhs = log_density(1.5 * c, 2.5 * c, &scaled, &q()).unwrap() + 2.0 * c.ln();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10, epsilon = 1e-10);
        }
    }

    #[test]
    fn claim_scale_does_not_overflow() {
        // rates of order 1e-4 against responses of order 1e4
        let p = BGParams::new(2.32, 2.89, 0.95, 19.27e-4).unwrap();
        let l = log_density(1500.0, 2200.0, &p, &q()).unwrap();
        assert!(l.is_finite());
        let p = BGParams::new(3.0, 4.0, 2.0, 1.0).unwrap();
        assert!(log_density(800.0, 900.0, &p, &q()).unwrap().is_finite());
    }

    #[test]
    fn independence_limit_factorizes() {
        // α3 → small: the density approaches the product of the marginals
        // only in mass, so check instead the exact identity for α3 = 1:
        // f = β^{a1+a2+1} e^{-β(y1+y2)} / (Γ(a1)Γ(a2)) ∫ e^{βx}(y1−x)^{a1−1}(y2−x)^{a2−1}
        // With a1 = a2 = 1 the integral is (e^{βm} − 1)/β.
        let p = BGParams::new(1.0, 1.0, 1.0, 2.0).unwrap();
        let (y1, y2) = (0.7, 1.9);
        let expected = 3.0 * 2f64.ln() - 2.0 * (y1 + y2) + ((2.0f64 * 0.7).exp_m1() / 2.0).ln();
        assert_relative_eq!(log_density(y1, y2, &p, &q()).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn diagonal_singularity_is_reported() {
        let p = BGParams::new(0.5, 0.5, 0.5, 1.0).unwrap();
        assert!(matches!(log_density(1.0, 1.0, &p, &q()), Err(Error::Domain(_))));
        assert!(log_density(1.0, 1.0 + 1e-9, &p, &q()).unwrap().is_finite());
        let p = BGParams::new(0.8, 0.7, 0.5, 1.0).unwrap();
        assert!(log_density(2.0, 2.0, &p, &q()).unwrap().is_finite());
    }

    #[test]
    fn conditional_identities() {
        let p = BGParams::new(0.8, 7.9, 5.0, 1.9).unwrap();
        let cm = conditional_moments(1.5, 2.5, &p, &q()).unwrap();
        assert_eq!(cm.e_x1, 1.5 - cm.e_x3);
        assert_eq!(cm.e_x2, 2.5 - cm.e_x3);
        assert!(cm.e_x3 > 0.0 && cm.e_x3 < 1.5);
        assert!(cm.e_log_x3 < 1.5f64.ln());
        assert!(cm.e_log_x1 < 1.5f64.ln());
        assert!(cm.e_log_x2 < 2.5f64.ln());
    }

    #[test]
    fn latent_mean_routes_agree() {
        let p = BGParams::new(0.4, 2.2, 0.3, 0.7).unwrap();
        let (ratio, direct) = latent_mean_routes(0.9, 4.0, &p, &q()).unwrap();
        assert_relative_eq!(ratio, direct, max_relative = 1e-8);
    }

    #[test]
    fn analytic_moments() {
        let m = moments(&BGParams::new(1.0, 1.0, 1.0, 1.0).unwrap());
        assert_eq!(m.mean, [2.0, 2.0]);
        assert_eq!(m.cov, [[2.0, 1.0], [1.0, 2.0]]);
        let m = moments(&BGParams::new(0.8, 7.9, 5.0, 1.9).unwrap());
        assert_relative_eq!(m.mean[0], 3.0526, epsilon = 1e-4);
        assert_relative_eq!(m.mean[1], 6.7895, epsilon = 1e-4);
        assert!(m.cov[0][1] > 0.0);
    }

    #[test]
    fn sampling_matches_moments() {
        let p = BGParams::new(0.8, 7.9, 5.0, 1.9).unwrap();
        let n = 100_000;
        let draws = sample(&p, n, 11).unwrap();
        let m = moments(&p);
        let nf = n as f64;
        for k in 0..2 {
            let vals: Vec<f64> = draws.iter().map(|d| if k == 0 { d.0 } else { d.1 }).collect();
            let mean = vals.iter().sum::<f64>() / nf;
            let se = (m.cov[k][k] / nf).sqrt();
            assert!((mean - m.mean[k]).abs() < 3.0 * se, "coordinate {k}: {mean} vs {}", m.mean[k]);
        }
        let p = BGParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let draws = sample(&p, n, 5).unwrap();
        let (m1, m2) = draws.iter().fold((0.0, 0.0), |a, d| (a.0 + d.0, a.1 + d.1));
        let (m1, m2) = (m1 / nf, m2 / nf);
        let prods: Vec<f64> = draws.iter().map(|d| (d.0 - m1) * (d.1 - m2)).collect();
        let cov = prods.iter().sum::<f64>() / (nf - 1.0);
        let sd = (prods.iter().map(|v| (v - cov).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        assert!((cov - 1.0).abs() < 3.0 * sd / nf.sqrt(), "cov {cov}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = BGParams::new(2.6, 2.0, 0.5, 1.0).unwrap();
        assert_eq!(sample(&p, 50, 3).unwrap(), sample(&p, 50, 3).unwrap());
        assert_ne!(sample(&p, 50, 3).unwrap(), sample(&p, 50, 4).unwrap());
        assert!(sample(&p, 0, 3).is_err());
    }

    #[test]
    fn rect_prob_window_checks() {
        let p = BGParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(joint_rect_prob_mc(&p, 1.0, 1.0, 20_000, 1).is_err());
        assert!(joint_rect_prob_mc(&p, 0.0, 2.0, 100, 1).is_err());
        let full = joint_rect_prob_mc(&p, 0.0, f64::INFINITY, 20_000, 1).unwrap();
        assert_eq!(full.joint, 1.0);
        assert_eq!(full.product, 1.0);
    }
}
