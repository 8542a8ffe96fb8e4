//! Predictive scores and partition agreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bgdist::{draw, BGParams};
use crate::error::{Error, Result};
use crate::moe::{FittedModel, ModelDesigns};
use crate::sim::pick;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, found: b });
    }
    Ok(())
}

/// Continuous ranked probability score of an empirical predictive sample:
/// `mean|s − y| − ½ mean|s − s'|`, the second mean over all ordered pairs.
pub fn crps_empirical(samples: &[f64], observation: f64) -> Result<f64> {
    let mut s = samples.to_vec();
    crps_sorted_in_place(&mut s, observation)
}

fn crps_sorted_in_place(s: &mut [f64], y: f64) -> Result<f64> {
    let m = s.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!("CRPS needs at least 2 samples, got {m}")));
    }
    s.sort_unstable_by(f64::total_cmp);
    let mf = m as f64;
    let abs_dev = s.iter().map(|v| (v - y).abs()).sum::<f64>() / mf;
    // Σ_{i<j} (s_(j) − s_(i)) = Σ_k s_(k) (2k − m + 1)
    let spread: f64 = s
        .iter()
        .enumerate()
        .map(|(k, v)| v * (2.0 * k as f64 - mf + 1.0))
        .sum();
    Ok(abs_dev - spread / (mf * mf))
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_len(predictions.len(), actuals.len())?;
    if predictions.is_empty() {
        return Err(Error::InvalidParameter("rmse of empty vectors".into()));
    }
    let ss: f64 = predictions.iter().zip(actuals).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((ss / predictions.len() as f64).sqrt())
}

/// Ordered Gini index: twice the area between the diagonal and the
/// concentration curve of actual values accumulated in ascending order of
/// prediction. Tied predictions form one linear segment.
pub fn gini_ordered(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_len(predictions.len(), actuals.len())?;
    let n = predictions.len();
    if n < 2 {
        return Err(Error::InvalidParameter("Gini needs at least 2 observations".into()));
    }
    let total: f64 = actuals.iter().sum();
    if !(total > 0.0) || actuals.iter().all(|a| *a == actuals[0]) {
        return Ok(0.0);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    let nf = n as f64;
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    let mut k = 0;
    while k < n {
        let mut end = k;
        let mut group = 0.0;
        while end < n && predictions[idx[end]] == predictions[idx[k]] {
            group += actuals[idx[end]];
            end += 1;
        }
        let x1 = end as f64 / nf;
        let y1 = y0 + group / total;
        area += (x1 - x0) * (y0 + y1) / 2.0;
        x0 = x1;
        y0 = y1;
        k = end;
    }
    Ok(2.0 * (0.5 - area))
}

/// Order-1 Wasserstein distance between two empirical distributions, by
/// integrating the distance between their quantile functions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("Wasserstein distance of an empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(wasserstein_sorted(&a, &b))
}

fn wasserstein_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u128, b.len() as u128);
    // Breakpoints i/n and j/m compared exactly as i·m vs j·n.
    let (mut i, mut j) = (0usize, 0usize);
    let mut t_prev: u128 = 0;
    let mut total = 0.0;
    let scale = (n * m) as f64;
    while i < a.len() && j < b.len() {
        let ta = (i as u128 + 1) * m;
        let tb = (j as u128 + 1) * n;
        let t = ta.min(tb);
        total += (t - t_prev) as f64 / scale * (a[i] - b[j]).abs();
        t_prev = t;
        if ta == t {
            i += 1;
        }
        if tb == t {
            j += 1;
        }
    }
    total
}

/// Adjusted Rand index of two labelings.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|r| c2(table[r * kb..(r + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|c| c2((0..ka).map(|r| table[r * kb + c]).sum())).sum();
    let total = c2(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Smallest error rate over one-to-one matchings of the labels of `a` to
/// those of `b`.
pub fn misclassification(a: &[usize], b: &[usize]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let (small, large, swap) = if ka <= kb { (ka, kb, false) } else { (kb, ka, true) };
    if large > 20 {
        return Err(Error::InvalidParameter(format!("at most 20 labels supported, got {large}")));
    }
    let mut table = vec![vec![0usize; large]; small];
    for (&x, &y) in a.iter().zip(b) {
        let (r, c) = if swap { (y, x) } else { (x, y) };
        table[r][c] += 1;
    }
    // best[mask]: most agreements assigning the first popcount(mask) small
    // labels to the large labels in `mask`.
    let mut best = vec![-1i64; 1 << large];
    best[0] = 0;
    let mut answer = 0i64;
    for mask in 0usize..(1 << large) {
        let cur = best[mask];
        if cur < 0 {
            continue;
        }
        let r = mask.count_ones() as usize;
        if r == small {
            answer = answer.max(cur);
            continue;
        }
        for c in 0..large {
            if mask & (1 << c) == 0 {
                let next = mask | (1 << c);
                best[next] = best[next].max(cur + table[r][c] as i64);
            }
        }
    }
    Ok(1.0 - answer as f64 / a.len() as f64)
}

/// `m` draws from a mixture: a component from `weights`, then a pair.
pub fn mixture_samples<R: Rng>(weights: &[f64], comps: &[BGParams], m: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..m)
        .map(|_| {
            let g = pick(weights, rng.random::<f64>());
            let (a, b) = draw(&comps[g], rng);
            [a, b]
        })
        .collect()
}

/// Per-row random stream used for predictive sampling.
pub fn row_stream(seed: u64, row: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// `m` draws from the predictive distribution of row `i`.
pub fn predictive_samples(
    model: &FittedModel,
    designs: &ModelDesigns,
    i: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let comps = model.observation_params(designs, i)?;
    let tau = model.gating_weights(designs, i);
    Ok(mixture_samples(&tau, &comps, m, &mut row_stream(seed, i)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub crps: f64,
    pub rmse: f64,
    pub gini: f64,
    pub wasserstein: f64,
}

/// Scores for each response and for their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub y1: Scores,
    pub y2: Scores,
    pub sum: Scores,
}

impl ScoreReport {
    pub fn targets(&self) -> [(&'static str, &Scores); 3] {
        [("sum", &self.sum), ("y1", &self.y1), ("y2", &self.y2)]
    }
}

/// Scores point predictions `means` and per-row predictive samples produced
/// by `sampler(row, m, rng)` against `actual`. CRPS is averaged over rows;
/// the Wasserstein distance compares all pooled predictive draws with the
/// observed values.
pub fn score_predictions<F>(actual: &[[f64; 2]], means: &[[f64; 2]], m: usize, seed: u64, mut sampler: F) -> Result<ScoreReport>
where
    F: FnMut(usize, usize, &mut ChaCha20Rng) -> Result<Vec<[f64; 2]>>,
{
    check_len(actual.len(), means.len())?;
    let n = actual.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!("at least 2 predictive samples required, got {m}")));
    }
    let mut crps = [0.0; 3];
    let mut pooled: [Vec<f64>; 3] = [Vec::with_capacity(n * m), Vec::with_capacity(n * m), Vec::with_capacity(n * m)];
    let mut buf = vec![0.0; m];
    for i in 0..n {
        let draws = sampler(i, m, &mut row_stream(seed, i))?;
        check_len(m, draws.len())?;
        let obs = [actual[i][0], actual[i][1], actual[i][0] + actual[i][1]];
        for t in 0..3 {
            for (b, d) in buf.iter_mut().zip(&draws) {
                *b = if t == 2 { d[0] + d[1] } else { d[t] };
            }
            pooled[t].extend_from_slice(&buf);
            crps[t] += crps_sorted_in_place(&mut buf, obs[t])?;
        }
    }
    let mut out = Vec::with_capacity(3);
    for t in 0..3 {
        let obs: Vec<f64> = actual.iter().map(|a| if t == 2 { a[0] + a[1] } else { a[t] }).collect();
        let pred: Vec<f64> = means.iter().map(|a| if t == 2 { a[0] + a[1] } else { a[t] }).collect();
        out.push(Scores {
            crps: crps[t] / n as f64,
            rmse: rmse(&pred, &obs)?,
            gini: if n >= 2 { gini_ordered(&pred, &obs)? } else { 0.0 },
            wasserstein: wasserstein_1d(&pooled[t], &obs)?,
        });
        pooled[t] = Vec::new();
    }
    Ok(ScoreReport {
        y1: out[0],
        y2: out[1],
        sum: out[2],
    })
}
