//! Local identifiability: the expected complete-data objective has a
//! block-diagonal Hessian across networks, and each block must be
//! negative definite at the fitted values.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::{Dataset, Design};
use crate::error::Result;
use crate::moe::{FittedModel, GatingParams};
use crate::quad::QuadratureConfig;

use super::e_step;
use super::mstep::{gating_gradient, rate_gradient, shape_gradient};

/// Curvature summary of one coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    /// Smallest eigenvalue of the negated Hessian.
    pub min_eigenvalue: f64,
    /// Largest eigenvalue of the negated Hessian.
    pub max_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityReport {
    pub blocks: Vec<BlockReport>,
    pub pass: bool,
}

impl IdentifiabilityReport {
    /// Smallest eigenvalue over all blocks relative to the largest.
    pub fn relative_min_eigenvalue(&self) -> f64 {
        let lo = self.blocks.iter().map(|b| b.min_eigenvalue).fold(f64::INFINITY, f64::min);
        let hi = self.blocks.iter().map(|b| b.max_eigenvalue).fold(0.0, f64::max);
        if hi > 0.0 {
            lo / hi
        } else {
            0.0
        }
    }
}

const RELATIVE_FLOOR: f64 = 1e-7;

fn fd_hessian<F: Fn(&[f64]) -> Vec<f64>>(x: &[f64], grad: F) -> DMatrix<f64> {
    let p = x.len();
    let mut h = DMatrix::zeros(p, p);
    for k in 0..p {
        let step = 1e-5 * x[k].abs().max(1.0);
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[k] += step;
        dn[k] -= step;
        let (gu, gd) = (grad(&up), grad(&dn));
        for j in 0..p {
            h[(j, k)] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

fn block(name: String, neg_hessian: DMatrix<f64>) -> BlockReport {
    let eig = SymmetricEigen::new(neg_hessian).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    BlockReport {
        name,
        min_eigenvalue: lo,
        max_eigenvalue: hi,
        pass: hi > 0.0 && lo > RELATIVE_FLOOR * hi,
    }
}

/// Finite-difference Hessian of each block of the expected complete-data
/// log-likelihood at the fitted values, with its extreme eigenvalues.
pub fn check_identifiability(model: &FittedModel, data: &Dataset, q: &QuadratureConfig) -> Result<IdentifiabilityReport> {
    let designs = model.designs(data)?;
    let table = model.param_table(&designs)?;
    let cache = e_step(data, model, q)?;
    let (n, g) = (cache.n, cache.g);
    let mut blocks = Vec::new();

    match &model.gating {
        GatingParams::Regression(c) => {
            let x: Vec<f64> = c.iter().flatten().copied().collect();
            let h = fd_hessian(&x, |v| gating_gradient(&designs.gating, &cache.z, g, v));
            blocks.push(block("gating".into(), -h));
        }
        GatingParams::Weights(w) => {
            let x: Vec<f64> = (0..g - 1).map(|c| (w[c] / w[g - 1]).ln()).collect();
            let ones = Design::intercept(n);
            let h = fd_hessian(&x, |v| gating_gradient(&ones, &cache.z, g, v));
            blocks.push(block("gating".into(), -h));
        }
        GatingParams::Equal => {}
    }

    let log_beta: Vec<f64> = table.beta.iter().map(|b| b.ln()).collect();
    let intercept = Design::intercept(n);
    for k in 0..3 {
        let kind = model.spec.alpha[k].kind;
        let design = if kind.is_regression() { &designs.alpha[k] } else { &intercept };
        let lx = cache.log_x(k);
        if kind.is_component_specific() {
            for c in 0..g {
                let (w, t): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| (cache.z[i * g + c], log_beta[i * g + c] + lx[i * g + c]))
                    .unzip();
                let x = model.alpha[k].log_coefs(c);
                let h = fd_hessian(&x, |v| shape_gradient(design, &w, &t, v));
                blocks.push(block(format!("alpha{}[{}]", k + 1, c + 1), -h));
            }
        } else {
            let t: Vec<f64> = (0..n)
                .map(|i| (0..g).map(|c| cache.z[i * g + c] * (log_beta[i * g + c] + lx[i * g + c])).sum())
                .collect();
            let w = vec![1.0; n];
            let x = model.alpha[k].log_coefs(0);
            let h = fd_hessian(&x, |v| shape_gradient(design, &w, &t, v));
            blocks.push(block(format!("alpha{}", k + 1), -h));
        }
    }

    let kind = model.spec.beta.kind;
    let design = if kind.is_regression() { &designs.beta } else { &intercept };
    let alpha_sum: Vec<f64> = (0..n * g)
        .map(|j| table.alpha[0][j] + table.alpha[1][j] + table.alpha[2][j])
        .collect();
    let xsum: Vec<f64> = (0..n * g).map(|j| cache.x1[j] + cache.x2[j] + cache.x3[j]).collect();
    if kind.is_component_specific() {
        for c in 0..g {
            let (a, s): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|i| {
                    let j = i * g + c;
                    (cache.z[j] * alpha_sum[j], cache.z[j] * xsum[j])
                })
                .unzip();
            let x = model.beta.log_coefs(c);
            let h = fd_hessian(&x, |v| rate_gradient(design, &a, &s, v));
            blocks.push(block(format!("beta[{}]", c + 1), -h));
        }
    } else {
        let (a, s): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| {
                (0..g).fold((0.0, 0.0), |acc, c| {
                    let j = i * g + c;
                    (acc.0 + cache.z[j] * alpha_sum[j], acc.1 + cache.z[j] * xsum[j])
                })
            })
            .unzip();
        let x = model.beta.log_coefs(0);
        let h = fd_hessian(&x, |v| rate_gradient(design, &a, &s, v));
        blocks.push(block("beta".into(), -h));
    }

    let pass = blocks.iter().all(|b| b.pass);
    Ok(IdentifiabilityReport { blocks, pass })
}
