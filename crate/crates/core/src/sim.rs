//! Seeded data generators: the two simulation designs used to validate the
//! model family, and a generic generator for any fitted model.
//!
//! Every observation draws from its own ChaCha20 stream `(seed, index)`, so
//! output does not depend on generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::bgdist::{draw, BGParams};
use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::moe::FittedModel;

/// Name of the label column written alongside simulated data.
pub const LABEL_COLUMN: &str = "true_label";

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub responses: Vec<[f64; 2]>,
    /// Covariate rows `(w1, w2, w3)`; empty rows for model-based draws
    /// without covariates.
    pub covariates: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
    /// Zero-based generating component of each row.
    pub true_labels: Vec<usize>,
    /// Per-observation parameters of every component.
    pub true_params: Vec<Vec<BGParams>>,
}

impl SimOutput {
    /// The responses and covariates as a dataset, optionally with the
    /// one-based generating label as an extra numeric column.
    pub fn to_dataset(&self, with_labels: bool) -> Result<Dataset> {
        let mut names = self.covariate_names.clone();
        let mut columns: Vec<Column> = (0..names.len())
            .map(|j| Column::Numeric(self.covariates.iter().map(|r| r[j]).collect()))
            .collect();
        if with_labels {
            names.push(LABEL_COLUMN.into());
            columns.push(Column::Numeric(self.true_labels.iter().map(|&l| (l + 1) as f64).collect()));
        }
        Dataset::new(self.responses.clone(), names, columns)
    }
}

fn stream(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_n(n: usize) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidParameter(format!("simulation size must be at least 10, got {n}")));
    }
    Ok(())
}

fn covariate_names() -> Vec<String> {
    vec!["w1".into(), "w2".into(), "w3".into()]
}

/// Shared skeleton: Gaussian covariates with variance 0.3, membership of
/// the second component with probability `logistic(gate(w))`, and
/// per-observation component parameters from `params(w)`.
fn two_component_study<G, P>(n: usize, seed: u64, gate: G, params: P) -> Result<SimOutput>
where
    G: Fn(&[f64; 3]) -> f64,
    P: Fn(&[f64; 3]) -> [BGParams; 2],
{
    check_n(n)?;
    let normal = Normal::new(0.0, 0.3f64.sqrt()).expect("valid normal");
    let mut out = SimOutput {
        responses: Vec::with_capacity(n),
        covariates: Vec::with_capacity(n),
        covariate_names: covariate_names(),
        true_labels: Vec::with_capacity(n),
        true_params: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = stream(seed, i);
        let w = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
        let label = usize::from(rng.random::<f64>() < logistic(gate(&w)));
        let comps = params(&w);
        comps[label].validate()?;
        let (y1, y2) = draw(&comps[label], &mut rng);
        out.responses.push([y1, y2]);
        out.covariates.push(w.to_vec());
        out.true_labels.push(label);
        out.true_params.push(comps.to_vec());
    }
    Ok(out)
}

/// Two constant components, BG(0.8, 7.9, 5, 1.9) and BG(2.6, 2, 0.5, 1),
/// with `logit P(second) = 1 + 2w1 − 2w2 + 3w3`.
pub fn simulate_study1(n: usize, seed: u64) -> Result<SimOutput> {
    let first = BGParams::new(0.8, 7.9, 5.0, 1.9)?;
    let second = BGParams::new(2.6, 2.0, 0.5, 1.0)?;
    two_component_study(
        n,
        seed,
        |w| 1.0 + 2.0 * w[0] - 2.0 * w[1] + 3.0 * w[2],
        |_| [first, second],
    )
}

/// Two regression components with log-linear shapes and rates and a steep
/// gating, `logit P(second) = 10 + 40w1 + 30w2 + 100w3`.
pub fn simulate_study2(n: usize, seed: u64) -> Result<SimOutput> {
    two_component_study(
        n,
        seed,
        |w| 10.0 + 40.0 * w[0] + 30.0 * w[1] + 100.0 * w[2],
        |w| {
            let [w1, w2, w3] = *w;
            [
                BGParams {
                    alpha1: (1.0 + 0.2 * w1 + 0.2 * w2).exp(),
                    alpha2: (0.1 + 0.1 * w2 + 0.1 * w3).exp(),
                    alpha3: (0.5 + 0.2 * w1 + 0.2 * w2 + 0.2 * w3).exp(),
                    beta: (0.2 + 0.1 * w1 + 0.1 * w2 + 0.2 * w3).exp(),
                },
                BGParams {
                    alpha1: (0.1 + 0.1 * w1 + 0.1 * w2).exp(),
                    alpha2: (2.0 + 0.3 * w2 + 0.3 * w3).exp(),
                    alpha3: (1.5 + 0.2 * w1 + 0.1 * w2 + 0.1 * w3).exp(),
                    beta: (0.7 + 0.1 * w1 + 0.1 * w2 + 0.2 * w3).exp(),
                },
            ]
        },
    )
}

/// Draws responses from `model` at the covariate rows of `covariates`:
/// a component from the gating, then a pair from that component.
pub fn simulate_from_model(model: &FittedModel, covariates: &Dataset, seed: u64) -> Result<SimOutput> {
    let designs = model.designs(covariates)?;
    let n = covariates.len();
    let g = model.g();
    let mut out = SimOutput {
        responses: Vec::with_capacity(n),
        covariates: Vec::new(),
        covariate_names: Vec::new(),
        true_labels: Vec::with_capacity(n),
        true_params: Vec::with_capacity(n),
    };
    for i in 0..n {
        let mut rng = stream(seed, i);
        let comps = model.observation_params(&designs, i)?;
        let tau = model.gating_weights(&designs, i);
        let label = pick(&tau, rng.random::<f64>()).min(g - 1);
        let (y1, y2) = draw(&comps[label], &mut rng);
        out.responses.push([y1, y2]);
        out.true_labels.push(label);
        out.true_params.push(comps);
    }
    Ok(out)
}

/// Index of the category that `u ∈ [0, 1)` falls into under `weights`.
pub(crate) fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (g, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return g;
        }
    }
    weights.len() - 1
}
