//! Starting values: k-means on log responses, plug-in latent values, and
//! one conditional M-step sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::moe::{ExpertParams, GatingParams, ModelDesigns, ModelSpec, NetworkKind};
use crate::data::ColumnKind;
use crate::moe::FittedModel;

use super::estep::EStepCache;
use super::mstep::{m_step_alpha, m_step_beta, m_step_gating, shape_constant};

const KMEANS_ITER: usize = 100;
const SEEDING_ATTEMPTS: usize = 20;

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Lloyd's algorithm from k-means++ seeds.
pub(crate) fn kmeans<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    if k == 1 {
        return vec![0; n];
    }
    let mut centers = vec![points[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[next]));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for (c, ctr) in centers.iter().enumerate() {
                let d = dist2(p, ctr);
                if d < bd {
                    bd = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *ctr = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }
    labels
}

/// Hard labels for the starting partition, re-seeding until every
/// cluster has at least `min_size` members.
pub(crate) fn initial_labels(y: &[[f64; 2]], g: usize, min_size: usize, seed: u64) -> Result<Vec<usize>> {
    let points: Vec<[f64; 2]> = y.iter().map(|v| [v[0].ln(), v[1].ln()]).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..SEEDING_ATTEMPTS {
        let labels = kmeans(&points, g, &mut rng);
        let mut counts = vec![0usize; g];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c >= min_size) {
            return Ok(labels);
        }
    }
    Err(Error::Fit(format!(
        "could not find a starting partition with {g} clusters of at least {min_size} observations"
    )))
}

/// Moment-based rate for a set of responses: mean/variance averaged over
/// the two coordinates.
fn moment_rate(y: &[[f64; 2]], idx: impl Iterator<Item = usize> + Clone) -> f64 {
    let mut est = 0.0;
    for k in 0..2 {
        let vals: Vec<f64> = idx.clone().map(|i| y[i][k]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0).max(1.0);
        est += if v > 0.0 { m / v } else { 1.0 / m };
    }
    est / 2.0
}

fn expand(kind: NetworkKind, per_component: &[f64], pooled: f64, p: usize) -> ExpertParams {
    let coefs = |v: f64| {
        let mut c = vec![0.0; p];
        c[0] = v.ln();
        c
    };
    match kind {
        NetworkKind::C => ExpertParams::Constant(per_component.to_vec()),
        NetworkKind::I => ExpertParams::Global(pooled),
        NetworkKind::V => ExpertParams::Regression(per_component.iter().map(|&v| coefs(v)).collect()),
        NetworkKind::E => ExpertParams::Shared(coefs(pooled)),
    }
}

fn values(params: &ExpertParams, design: &crate::data::Design, n: usize, g: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n * g];
    for i in 0..n {
        for c in 0..g {
            out[i * g + c] = params.value(c, design, i)?;
        }
    }
    Ok(out)
}

/// Starting model from a hard partition.
pub(crate) fn model_from_labels(
    y: &[[f64; 2]],
    designs: &ModelDesigns,
    spec: &ModelSpec,
    schema: &[(String, ColumnKind)],
    labels: &[usize],
) -> Result<FittedModel> {
    let n = y.len();
    let g = spec.g;
    let mut cache = EStepCache {
        n,
        g,
        z: vec![0.0; n * g],
        x1: vec![0.0; n * g],
        x2: vec![0.0; n * g],
        x3: vec![0.0; n * g],
        lx1: vec![0.0; n * g],
        lx2: vec![0.0; n * g],
        lx3: vec![0.0; n * g],
        loglik: f64::NAN,
    };
    for i in 0..n {
        let half = 0.5 * y[i][0].min(y[i][1]);
        cache.z[i * g + labels[i]] = 1.0;
        for c in 0..g {
            let j = i * g + c;
            cache.x3[j] = half;
            cache.x1[j] = y[i][0] - half;
            cache.x2[j] = y[i][1] - half;
            cache.lx1[j] = cache.x1[j].ln();
            cache.lx2[j] = cache.x2[j].ln();
            cache.lx3[j] = half.ln();
        }
    }

    let members = |c: usize| (0..n).filter(move |&i| labels[i] == c);
    let rates: Vec<f64> = (0..g).map(|c| moment_rate(y, members(c))).collect();
    let pooled_rate = moment_rate(y, 0..n);
    let mut beta = expand(spec.beta.kind, &rates, pooled_rate, designs.beta.ncols());

    let counts: Vec<f64> = (0..g).map(|c| members(c).count() as f64).collect();
    let tau: Vec<f64> = counts.iter().map(|c| c / n as f64).collect();
    let (gating, _) = m_step_gating(spec.gating.kind, &cache.z, g, &designs.gating, &GatingParams::Weights(tau))?;

    let log_beta: Vec<f64> = values(&beta, &designs.beta, n, g)?.iter().map(|b| b.ln()).collect();
    let mut alpha = Vec::with_capacity(3);
    for k in 0..3 {
        let lx = cache.log_x(k);
        let per: Vec<f64> = (0..g)
            .map(|c| {
                let (w, t): (Vec<f64>, Vec<f64>) =
                    (0..n).map(|i| (cache.z[i * g + c], log_beta[i * g + c] + lx[i * g + c])).unzip();
                shape_constant(&w, &t)
            })
            .collect::<Result<_>>()?;
        let pooled_t: Vec<f64> = (0..n)
            .map(|i| (0..g).map(|c| cache.z[i * g + c] * (log_beta[i * g + c] + lx[i * g + c])).sum())
            .collect();
        let pooled = shape_constant(&vec![1.0; n], &pooled_t)?;
        let start = expand(spec.alpha[k].kind, &per, pooled, designs.alpha[k].ncols());
        let (a, _) = m_step_alpha(spec.alpha[k].kind, k, &cache, &designs.alpha[k], &log_beta, &start)?;
        alpha.push(a);
    }
    let alpha: [ExpertParams; 3] = alpha.try_into().expect("three shape networks");
    let mut alpha_sum = vec![0.0; n * g];
    for (k, a) in alpha.iter().enumerate() {
        for (s, v) in alpha_sum.iter_mut().zip(values(a, &designs.alpha[k], n, g)?) {
            *s += v;
        }
    }
    beta = m_step_beta(spec.beta.kind, &cache, &designs.beta, &alpha_sum, &beta)?.0;

    Ok(FittedModel {
        spec: spec.clone(),
        schema: schema.to_vec(),
        gating,
        alpha,
        beta,
        loglik: f64::NAN,
        n_params: 0,
        n_obs: n,
        converged: false,
        iterations: 0,
        responsibilities: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmeans_separates_obvious_clusters() {
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push([0.0 + 0.01 * i as f64, 0.0]);
            pts.push([10.0 + 0.01 * i as f64, 10.0]);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let labels = kmeans(&pts, 2, &mut rng);
        for i in 0..20 {
            assert_eq!(labels[2 * i], labels[0]);
            assert_eq!(labels[2 * i + 1], labels[1]);
        }
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn labels_are_deterministic_given_seed() {
        let y: Vec<[f64; 2]> = (1..60).map(|i| [i as f64, (60 - i) as f64 + 0.5]).collect();
        assert_eq!(initial_labels(&y, 3, 2, 5).unwrap(), initial_labels(&y, 3, 2, 5).unwrap());
        assert!(initial_labels(&y, 1, 2, 5).unwrap().iter().all(|&l| l == 0));
        assert!(initial_labels(&y, 3, 40, 5).is_err());
    }
}
