//! Conditional maximization steps. Each network update maximizes its own
//! part of the expected complete-data log-likelihood with the other
//! networks held fixed.
//!
//! Shape networks maximize `Σ ωᵢ [αᵢ cᵢ − ln Γ(αᵢ)]` with
//! `cᵢ = ln βᵢ + E[ln Xₖ]`; the rate network maximizes
//! `Σ [aᵢ ηᵢ − e^{ηᵢ} sᵢ]` with `aᵢ` the summed shapes and `sᵢ` the summed
//! latent means; the gating maximizes `Σ zᵢg ln τg(wᵢ)`.

use nalgebra::{DMatrix, DVector};

use crate::data::Design;
use crate::error::{Error, Result};
use crate::moe::{log_softmax, ExpertParams, GatingParams, NetworkKind};
use crate::special::{digamma, inverse_digamma, ln_gamma, trigamma};

use super::estep::EStepCache;

const MAX_INNER: usize = 100;
const MAX_HALVINGS: usize = 60;

/// Outcome of an inner optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InnerStats {
    pub iterations: usize,
    pub converged: bool,
}

/// `Σ ωᵢ [αᵢ cᵢ − ln Γ(αᵢ)]` with `αᵢ = exp(γ·wᵢ)`.
pub fn shape_objective(design: &Design, weights: &[f64], targets: &[f64], coefs: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..design.nrows() {
        if weights[i] == 0.0 {
            continue;
        }
        let a = design.dot(i, coefs).exp();
        total += weights[i] * (a * targets[i] - ln_gamma(a));
    }
    total
}

/// Gradient of [`shape_objective`]: `Σ ωᵢ αᵢ (cᵢ − ψ(αᵢ)) wᵢ`.
pub fn shape_gradient(design: &Design, weights: &[f64], targets: &[f64], coefs: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; coefs.len()];
    for i in 0..design.nrows() {
        if weights[i] == 0.0 {
            continue;
        }
        let a = design.dot(i, coefs).exp();
        let s = weights[i] * a * (targets[i] - digamma(a));
        for (g, w) in grad.iter_mut().zip(design.row(i)) {
            *g += s * w;
        }
    }
    grad
}

/// Solves `ψ(α) = Σωc / Σω`, the maximizer of the shape objective for a
/// constant shape.
pub fn shape_constant(weights: &[f64], targets: &[f64]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (w, c) in weights.iter().zip(targets) {
        num += w * c;
        den += w;
    }
    if !(den > 0.0) {
        return Err(Error::Fit("shape update has zero total weight".into()));
    }
    let target = num / den;
    inverse_digamma(target).ok_or_else(|| Error::Fit(format!("cannot solve digamma(alpha) = {target}")))
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// Solves `A x = b` for symmetric positive definite `A`, adding a tiny
/// ridge when the factorization fails.
fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for ridge in [1e-10, 1e-8, 1e-6, 1e-4] {
        let mut r = a.clone();
        for j in 0..r.nrows() {
            r[(j, j)] += ridge * scale;
        }
        if let Some(ch) = r.cholesky() {
            return Some(ch.solve(b));
        }
    }
    None
}

/// Newton ascent with step halving. `eval` returns the objective and, when
/// asked, the gradient and the negated (positive definite) curvature used
/// for the step.
fn newton_ascent<F>(start: &[f64], mut eval: F) -> (Vec<f64>, InnerStats)
where
    F: FnMut(&[f64], bool) -> (f64, Option<(DVector<f64>, DMatrix<f64>)>),
{
    let mut x = start.to_vec();
    let (mut f, _) = eval(&x, false);
    f = finite_or_neg_inf(f);
    let mut stats = InnerStats::default();
    for it in 0..MAX_INNER {
        stats.iterations = it + 1;
        let (_, deriv) = eval(&x, true);
        let (grad, curv) = deriv.expect("derivatives requested");
        let gnorm = grad.amax();
        if gnorm <= 1e-12 * (1.0 + f.abs()) {
            stats.converged = true;
            break;
        }
        let Some(dir) = spd_solve(curv, &grad) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let (fc, _) = eval(&cand, false);
            let fc = finite_or_neg_inf(fc);
            if fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            stats.converged = true;
            break;
        };
        let gain = fc - f;
        let step = dir.amax() * t;
        x = cand;
        f = fc;
        if gain <= 1e-13 * (1.0 + f.abs()) || step <= 1e-12 {
            stats.converged = true;
            break;
        }
    }
    (x, stats)
}

/// Maximizes the shape objective over log-link coefficients.
pub fn shape_regression(
    design: &Design,
    weights: &[f64],
    targets: &[f64],
    start: &[f64],
) -> (Vec<f64>, InnerStats) {
    let p = design.ncols();
    newton_ascent(start, |coefs, want| {
        if !want {
            return (shape_objective(design, weights, targets, coefs), None);
        }
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut fisher = DMatrix::zeros(p, p);
        for i in 0..design.nrows() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let a = design.dot(i, coefs).exp();
            let resid = targets[i] - digamma(a);
            let d1 = w * a * resid;
            let info = w * a * a * trigamma(a);
            let d2 = info - d1;
            let row = design.row(i);
            for r in 0..p {
                grad[r] += d1 * row[r];
                for c in 0..=r {
                    hess[(r, c)] += d2 * row[r] * row[c];
                    fisher[(r, c)] += info * row[r] * row[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                hess[(c, r)] = hess[(r, c)];
                fisher[(c, r)] = fisher[(r, c)];
            }
        }
        // Use the exact curvature where it is positive definite, otherwise
        // fall back to the always-positive information part.
        let curv = if hess.clone().cholesky().is_some() { hess } else { fisher };
        (0.0, Some((grad, curv)))
    })
}

/// `Σ [aᵢ ηᵢ − e^{ηᵢ} sᵢ]` with `ηᵢ = γ·wᵢ`.
pub fn rate_objective(design: &Design, a: &[f64], s: &[f64], coefs: &[f64]) -> f64 {
    (0..design.nrows())
        .map(|i| {
            let eta = design.dot(i, coefs);
            a[i] * eta - eta.exp() * s[i]
        })
        .sum()
}

/// Gradient of [`rate_objective`]: `Σ (aᵢ − e^{ηᵢ} sᵢ) wᵢ`.
pub fn rate_gradient(design: &Design, a: &[f64], s: &[f64], coefs: &[f64]) -> Vec<f64> {
    let mut grad = vec![0.0; coefs.len()];
    for i in 0..design.nrows() {
        let r = a[i] - design.dot(i, coefs).exp() * s[i];
        for (g, w) in grad.iter_mut().zip(design.row(i)) {
            *g += r * w;
        }
    }
    grad
}

/// Maximizes the (concave) rate objective over log-link coefficients.
pub fn rate_regression(design: &Design, a: &[f64], s: &[f64], start: &[f64]) -> (Vec<f64>, InnerStats) {
    let p = design.ncols();
    newton_ascent(start, |coefs, want| {
        if !want {
            return (rate_objective(design, a, s, coefs), None);
        }
        let mut grad = DVector::zeros(p);
        let mut curv = DMatrix::zeros(p, p);
        for i in 0..design.nrows() {
            let m = design.dot(i, coefs).exp() * s[i];
            let row = design.row(i);
            for r in 0..p {
                grad[r] += (a[i] - m) * row[r];
                for c in 0..=r {
                    curv[(r, c)] += m * row[r] * row[c];
                }
            }
        }
        for r in 0..p {
            for c in 0..r {
                curv[(c, r)] = curv[(r, c)];
            }
        }
        (0.0, Some((grad, curv)))
    })
}

/// `Σᵢ Σg zᵢg ln τg(wᵢ)` for multinomial-logistic coefficients stored as
/// `G − 1` rows of length `d`, flattened.
pub fn gating_objective(design: &Design, z: &[f64], g: usize, coefs: &[f64]) -> f64 {
    let d = design.ncols();
    let mut eta = vec![0.0; g];
    let mut lp = vec![0.0; g];
    let mut total = 0.0;
    for i in 0..design.nrows() {
        for c in 0..g - 1 {
            eta[c] = design.dot(i, &coefs[c * d..(c + 1) * d]);
        }
        eta[g - 1] = 0.0;
        log_softmax(&eta, &mut lp);
        for c in 0..g {
            let zc = z[i * g + c];
            if zc > 0.0 {
                total += zc * lp[c];
            }
        }
    }
    total
}

/// Gradient of [`gating_objective`]: `Σᵢ (zᵢg − τᵢg) wᵢ` per non-reference row.
pub fn gating_gradient(design: &Design, z: &[f64], g: usize, coefs: &[f64]) -> Vec<f64> {
    let d = design.ncols();
    let mut grad = vec![0.0; (g - 1) * d];
    let mut eta = vec![0.0; g];
    let mut lp = vec![0.0; g];
    for i in 0..design.nrows() {
        for c in 0..g - 1 {
            eta[c] = design.dot(i, &coefs[c * d..(c + 1) * d]);
        }
        eta[g - 1] = 0.0;
        log_softmax(&eta, &mut lp);
        let row = design.row(i);
        for c in 0..g - 1 {
            let r = z[i * g + c] - lp[c].exp();
            for j in 0..d {
                grad[c * d + j] += r * row[j];
            }
        }
    }
    grad
}

/// Multinomial-logistic Newton fit of `z` on the gating design.
pub fn gating_regression(design: &Design, z: &[f64], g: usize, start: &[f64]) -> (Vec<f64>, InnerStats) {
    let d = design.ncols();
    let m = (g - 1) * d;
    newton_ascent(start, |coefs, want| {
        if !want {
            return (gating_objective(design, z, g, coefs), None);
        }
        let mut grad = DVector::zeros(m);
        let mut curv = DMatrix::zeros(m, m);
        let mut eta = vec![0.0; g];
        let mut lp = vec![0.0; g];
        for i in 0..design.nrows() {
            for c in 0..g - 1 {
                eta[c] = design.dot(i, &coefs[c * d..(c + 1) * d]);
            }
            eta[g - 1] = 0.0;
            log_softmax(&eta, &mut lp);
            let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let row = design.row(i);
            for a in 0..g - 1 {
                let r = z[i * g + a] - p[a];
                for j in 0..d {
                    grad[a * d + j] += r * row[j];
                }
                for b in 0..=a {
                    let h = if a == b { p[a] * (1.0 - p[a]) } else { -p[a] * p[b] };
                    if h == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        for k in 0..d {
                            curv[(a * d + j, b * d + k)] += h * row[j] * row[k];
                        }
                    }
                }
            }
        }
        for r in 0..m {
            for c in 0..r {
                curv[(c, r)] = curv[(r, c)];
            }
        }
        (0.0, Some((grad, curv)))
    })
}

/// Gating update for the given kind.
pub fn m_step_gating(
    kind: NetworkKind,
    z: &[f64],
    g: usize,
    design: &Design,
    current: &GatingParams,
) -> Result<(GatingParams, InnerStats)> {
    let n = design.nrows();
    match kind {
        NetworkKind::E | NetworkKind::I => Ok((GatingParams::Equal, InnerStats::default())),
        NetworkKind::C => {
            let mut tau = vec![0.0; g];
            for row in z.chunks(g) {
                for (t, v) in tau.iter_mut().zip(row) {
                    *t += v;
                }
            }
            let total: f64 = tau.iter().sum();
            for t in &mut tau {
                *t /= total;
            }
            if tau.iter().any(|t| !(*t > 0.0)) {
                return Err(Error::Fit("a mixing weight collapsed to zero".into()));
            }
            let _ = n;
            Ok((GatingParams::Weights(tau), InnerStats { iterations: 1, converged: true }))
        }
        NetworkKind::V => {
            let d = design.ncols();
            let start: Vec<f64> = match current {
                GatingParams::Regression(c) if c.len() == g - 1 && c.iter().all(|r| r.len() == d) => {
                    c.iter().flatten().copied().collect()
                }
                GatingParams::Weights(w) => {
                    let mut s = vec![0.0; (g - 1) * d];
                    for c in 0..g - 1 {
                        s[c * d] = (w[c] / w[g - 1]).ln();
                    }
                    s
                }
                _ => vec![0.0; (g - 1) * d],
            };
            let (coefs, stats) = gating_regression(design, z, g, &start);
            if coefs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Fit("gating coefficients diverged".into()));
            }
            Ok((
                GatingParams::Regression(coefs.chunks(d).map(<[f64]>::to_vec).collect()),
                stats,
            ))
        }
    }
}

/// Per-observation shape objective inputs of network `k` for component
/// `c`: weights `z` and targets `ln β + E[ln Xₖ]`.
fn shape_inputs(cache: &EStepCache, k: usize, log_beta: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let g = cache.g;
    let lx = cache.log_x(k);
    (0..cache.n)
        .map(|i| {
            let j = i * g + c;
            (cache.z[j], log_beta[j] + lx[j])
        })
        .unzip()
}

/// Shapes shared over components collapse to unit weights and
/// responsibility-averaged targets, since each row of `z` sums to one.
fn pooled_shape_inputs(cache: &EStepCache, k: usize, log_beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = cache.g;
    let lx = cache.log_x(k);
    let targets = (0..cache.n)
        .map(|i| (0..g).map(|c| cache.z[i * g + c] * (log_beta[i * g + c] + lx[i * g + c])).sum())
        .collect();
    (vec![1.0; cache.n], targets)
}

fn start_coefs(current: &ExpertParams, c: usize, p: usize) -> Vec<f64> {
    let mut v = current.log_coefs(c);
    v.resize(p, 0.0);
    v
}

/// Update of shape network `k` (0, 1, 2 for α1, α2, α3). `log_beta` is the
/// current per-observation log rate, row-major `n × G`.
pub fn m_step_alpha(
    kind: NetworkKind,
    k: usize,
    cache: &EStepCache,
    design: &Design,
    log_beta: &[f64],
    current: &ExpertParams,
) -> Result<(ExpertParams, InnerStats)> {
    let g = cache.g;
    let p = design.ncols();
    let mut stats = InnerStats { iterations: 0, converged: true };
    let mut absorb = |s: InnerStats| {
        stats.iterations += s.iterations;
        stats.converged &= s.converged;
    };
    let out = match kind {
        NetworkKind::C => ExpertParams::Constant(
            (0..g)
                .map(|c| {
                    let (w, t) = shape_inputs(cache, k, log_beta, c);
                    shape_constant(&w, &t)
                })
                .collect::<Result<_>>()?,
        ),
        NetworkKind::I => {
            let (w, t) = pooled_shape_inputs(cache, k, log_beta);
            ExpertParams::Global(shape_constant(&w, &t)?)
        }
        NetworkKind::V => ExpertParams::Regression(
            (0..g)
                .map(|c| {
                    let (w, t) = shape_inputs(cache, k, log_beta, c);
                    let (coefs, s) = shape_regression(design, &w, &t, &start_coefs(current, c, p));
                    absorb(s);
                    coefs
                })
                .collect(),
        ),
        NetworkKind::E => {
            let (w, t) = pooled_shape_inputs(cache, k, log_beta);
            let (coefs, s) = shape_regression(design, &w, &t, &start_coefs(current, 0, p));
            absorb(s);
            ExpertParams::Shared(coefs)
        }
    };
    Ok((out, stats))
}

/// Update of the rate network given the current per-observation shape sum
/// `alpha_sum` (row-major `n × G`).
pub fn m_step_beta(
    kind: NetworkKind,
    cache: &EStepCache,
    design: &Design,
    alpha_sum: &[f64],
    current: &ExpertParams,
) -> Result<(ExpertParams, InnerStats)> {
    let g = cache.g;
    let n = cache.n;
    let p = design.ncols();
    let xsum = |j: usize| cache.x1[j] + cache.x2[j] + cache.x3[j];
    let mut stats = InnerStats { iterations: 0, converged: true };
    let ratio = |num: f64, den: f64| -> Result<f64> {
        let b = num / den;
        if b.is_finite() && b > 0.0 {
            Ok(b)
        } else {
            Err(Error::Fit(format!("rate update produced {b}")))
        }
    };
    let out = match kind {
        NetworkKind::C => ExpertParams::Constant(
            (0..g)
                .map(|c| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for i in 0..n {
                        let j = i * g + c;
                        num += cache.z[j] * alpha_sum[j];
                        den += cache.z[j] * xsum(j);
                    }
                    ratio(num, den)
                })
                .collect::<Result<_>>()?,
        ),
        NetworkKind::I => {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n * g {
                num += cache.z[j] * alpha_sum[j];
                den += cache.z[j] * xsum(j);
            }
            ExpertParams::Global(ratio(num, den)?)
        }
        NetworkKind::V => ExpertParams::Regression(
            (0..g)
                .map(|c| {
                    let (a, s): (Vec<f64>, Vec<f64>) = (0..n)
                        .map(|i| {
                            let j = i * g + c;
                            (cache.z[j] * alpha_sum[j], cache.z[j] * xsum(j))
                        })
                        .unzip();
                    let (coefs, st) = rate_regression(design, &a, &s, &start_coefs(current, c, p));
                    stats.iterations += st.iterations;
                    stats.converged &= st.converged;
                    coefs
                })
                .collect(),
        ),
        NetworkKind::E => {
            let (a, s): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|i| {
                    (0..g).fold((0.0, 0.0), |acc, c| {
                        let j = i * g + c;
                        (acc.0 + cache.z[j] * alpha_sum[j], acc.1 + cache.z[j] * xsum(j))
                    })
                })
                .unzip();
            let (coefs, st) = rate_regression(design, &a, &s, &start_coefs(current, 0, p));
            stats = st;
            ExpertParams::Shared(coefs)
        }
    };
    Ok((out, stats))
}
