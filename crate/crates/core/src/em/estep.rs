use rayon::prelude::*;

use crate::bgdist::density_and_moments;
use crate::error::{Error, Result};
use crate::moe::ParamTable;
use crate::quad::QuadratureConfig;

/// Posterior quantities of one E-step, row-major `n × G`.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepCache {
    pub n: usize,
    pub g: usize,
    pub z: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
    pub lx1: Vec<f64>,
    pub lx2: Vec<f64>,
    pub lx3: Vec<f64>,
    pub loglik: f64,
}

impl EStepCache {
    /// Conditional log-means of latent variable `k` (0, 1, 2 for X1, X2, X3).
    pub fn log_x(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.lx1,
            1 => &self.lx2,
            _ => &self.lx3,
        }
    }

    /// Column sums of `z`.
    pub fn component_sizes(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.g];
        for row in self.z.chunks(self.g) {
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        s
    }
}

struct Row {
    ll: f64,
    z: Vec<f64>,
    x3: Vec<f64>,
    lx: [Vec<f64>; 3],
}

/// Evaluates responsibilities, latent conditional moments and the
/// observed-data log-likelihood.
pub fn e_step_table(y: &[[f64; 2]], table: &ParamTable, q: &QuadratureConfig) -> Result<EStepCache> {
    let g = table.g;
    let rows: Vec<Row> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let [y1, y2] = y[i];
            let mut lf = vec![0.0; g];
            let mut x3 = vec![0.0; g];
            let mut lx = [vec![0.0; g], vec![0.0; g], vec![0.0; g]];
            for c in 0..g {
                let (ln_f, cm) = density_and_moments(y1, y2, &table.params(i, c), q)
                    .map_err(|e| Error::Fit(format!("E-step failed at observation {}, component {}: {e}", i + 1, c + 1)))?;
                lf[c] = table.log_tau[i * g + c] + ln_f;
                x3[c] = cm.e_x3;
                lx[0][c] = cm.e_log_x1;
                lx[1][c] = cm.e_log_x2;
                lx[2][c] = cm.e_log_x3;
            }
            let m = lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::Fit(format!("observation {} has zero likelihood under every component", i + 1)));
            }
            let s: f64 = lf.iter().map(|l| (l - m).exp()).sum();
            let ll = m + s.ln();
            let z = lf.iter().map(|l| (l - ll).exp()).collect();
            Ok(Row { ll, z, x3, lx })
        })
        .collect::<Result<_>>()?;

    let n = y.len();
    let mut cache = EStepCache {
        n,
        g,
        z: Vec::with_capacity(n * g),
        x1: Vec::with_capacity(n * g),
        x2: Vec::with_capacity(n * g),
        x3: Vec::with_capacity(n * g),
        lx1: Vec::with_capacity(n * g),
        lx2: Vec::with_capacity(n * g),
        lx3: Vec::with_capacity(n * g),
        loglik: 0.0,
    };
    // Sequential accumulation keeps the result independent of worker count.
    for (i, r) in rows.into_iter().enumerate() {
        cache.loglik += r.ll;
        let total: f64 = r.z.iter().sum();
        for c in 0..g {
            cache.z.push(r.z[c] / total);
            cache.x3.push(r.x3[c]);
            cache.x1.push(y[i][0] - r.x3[c]);
            cache.x2.push(y[i][1] - r.x3[c]);
            cache.lx1.push(r.lx[0][c]);
            cache.lx2.push(r.lx[1][c]);
            cache.lx3.push(r.lx[2][c]);
        }
    }
    Ok(cache)
}
