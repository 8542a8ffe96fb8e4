//! Univariate gamma regression with log link, fitted by iteratively
//! reweighted least squares. Used as the comparison model.

use nalgebra::{DMatrix, DVector};

use crate::data::Design;
use crate::error::{Error, Result};
use crate::special::ln_gamma;

const MAX_ITER: usize = 100;
const DEVIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Pearson estimate of the dispersion.
    pub dispersion: f64,
    pub loglik: f64,
    pub deviance: f64,
    pub iterations: usize,
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(y, m)| -(y / m).ln() + (y - m) / m)
        .sum::<f64>()
}

fn to_matrix(x: &Design) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x.row(i)[j])
}

/// Fits `log E[y] = X b` with gamma variance.
pub fn fit_gamma_glm(y: &[f64], x: &Design) -> Result<GlmFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Dimension { expected: n, found: y.len() });
    }
    if n <= p {
        return Err(Error::Data(format!("{n} observations cannot support {p} coefficients")));
    }
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("gamma regression needs positive responses, got {v}")));
    }
    let xm = to_matrix(x);
    let xtx = xm.transpose() * &xm;
    let sv = xtx.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > 1e-10 * hi) {
        return Err(Error::RankDeficient(format!(
            "design has {p} columns but is numerically rank deficient (singular value ratio {:e})",
            lo / hi
        )));
    }
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("cross-product matrix is not positive definite".into()))?;

    let mean = y.iter().sum::<f64>() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = mean.ln();
    let mu_of = |b: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| x.dot(i, b.as_slice()).exp()).collect() };
    let mut mu = mu_of(&beta);
    let mut dev = deviance(y, &mu);
    let mut trace = vec![dev];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=MAX_ITER {
        iterations = it;
        let z = DVector::from_fn(n, |i, _| x.dot(i, beta.as_slice()) + (y[i] - mu[i]) / mu[i]);
        let target = chol.solve(&(xm.transpose() * z));
        let mut step = &target - &beta;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &step;
            let m = mu_of(&cand);
            let d = deviance(y, &m);
            if d.is_finite() && d <= dev * (1.0 + 1e-15) {
                accepted = Some((cand, m, d));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, m, d)) = accepted else {
            converged = true;
            break;
        };
        let change = (dev - d).abs() / (d.abs() + 0.1);
        let coef_change = (&cand - &beta).amax();
        beta = cand;
        mu = m;
        dev = d;
        trace.push(dev);
        if change < DEVIANCE_TOL && coef_change < 1e-10 * (1.0 + beta.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged(format!(
            "gamma regression did not converge in {MAX_ITER} iterations; deviance trace {:?}",
            &trace[trace.len().saturating_sub(5)..]
        )));
    }
    let dispersion = y
        .iter()
        .zip(&mu)
        .map(|(y, m)| ((y - m) / m).powi(2))
        .sum::<f64>()
        / (n - p) as f64;
    let shape = 1.0 / dispersion;
    let loglik = y
        .iter()
        .zip(&mu)
        .map(|(y, m)| shape * (shape * y / m).ln() - shape * y / m - y.ln() - ln_gamma(shape))
        .sum();
    let inv = chol.inverse();
    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..p).map(|j| (dispersion * inv[(j, j)]).sqrt()).collect(),
        dispersion,
        loglik,
        deviance: dev,
        iterations,
    })
}

/// Fitted means `exp(X b)`.
pub fn predict_glm(fit: &GlmFit, x: &Design) -> Result<Vec<f64>> {
    if x.ncols() != fit.coefficients.len() {
        return Err(Error::Dimension {
            expected: fit.coefficients.len(),
            found: x.ncols(),
        });
    }
    Ok((0..x.nrows()).map(|i| x.dot(i, &fit.coefficients).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn intercept_only_reproduces_mean() {
        let y = [0.3, 1.7, 2.2, 5.0, 0.9, 3.3];
        let fit = fit_gamma_glm(&y, &Design::intercept(6)).unwrap();
        let mean = y.iter().sum::<f64>() / 6.0;
        let pred = predict_glm(&fit, &Design::intercept(1)).unwrap();
        assert_relative_eq!(pred[0], mean, max_relative = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        assert!(matches!(
            fit_gamma_glm(&y, &Design::from_rows(&rows).unwrap()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_gamma_glm(&[1.0, -1.0, 2.0], &Design::intercept(3)).is_err());
        assert!(fit_gamma_glm(&[1.0], &Design::intercept(1)).is_err());
    }

    #[test]
    fn prediction_is_monotone_in_positive_coefficient() {
        let fit = GlmFit {
            coefficients: vec![0.1, 0.7],
            std_errors: vec![0.0; 2],
            dispersion: 1.0,
            loglik: 0.0,
            deviance: 0.0,
            iterations: 0,
        };
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let p = predict_glm(&fit, &Design::from_rows(&rows).unwrap()).unwrap();
        assert_relative_eq!(p[0], 0.1f64.exp());
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }
}
