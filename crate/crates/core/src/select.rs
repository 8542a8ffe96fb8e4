//! Information criteria and forward stepwise search over the number of
//! components, the model type and the covariate sets.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::em::{fit, fit_from, restart_seed, EMConfig};
use crate::error::{Error, Result};
use crate::moe::{schema_for, ExpertParams, FittedModel, GatingParams, ModelSpec, NetworkKind, NetworkSpec};
use crate::quad::QuadratureConfig;

/// Criterion improvements at or below this are treated as ties.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

/// Convergence tolerance used to polish the incumbent and the best
/// candidate before they are compared.
pub const POLISH_TOL: f64 = 1e-8;

pub fn aic(loglik: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    k as f64 * (n as f64).ln() - 2.0 * loglik
}

/// BIC plus twice the entropy of the responsibilities.
pub fn icl(bic: f64, z: &[f64]) -> f64 {
    let entropy: f64 = z.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    bic + 2.0 * entropy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
    Icl,
}

impl FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "icl" => Ok(Criterion::Icl),
            _ => Err(Error::InvalidParameter(format!("unknown criterion '{s}' (expected aic, bic or icl)"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Icl => "icl",
        })
    }
}

impl Criterion {
    /// Value for a fitted model; lower is better.
    pub fn evaluate(self, model: &FittedModel) -> f64 {
        match self {
            Criterion::Aic => aic(model.loglik, model.n_params),
            Criterion::Bic => bic(model.loglik, model.n_params, model.n_obs),
            Criterion::Icl => icl(
                bic(model.loglik, model.n_params, model.n_obs),
                model.responsibilities.as_deref().unwrap_or(&[]),
            ),
        }
    }
}

/// Covariates the search may add to each network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    pub gating: Vec<String>,
    pub alpha: [Vec<String>; 3],
    pub beta: Vec<String>,
}

impl Candidates {
    /// The same list for every network.
    pub fn everywhere(cols: &[String]) -> Self {
        Self {
            gating: cols.to_vec(),
            alpha: [cols.to_vec(), cols.to_vec(), cols.to_vec()],
            beta: cols.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub max_g: usize,
    pub criterion: Criterion,
    pub candidates: Candidates,
    pub max_steps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_g: 7,
            criterion: Criterion::Aic,
            candidates: Candidates::default(),
            max_steps: 100,
        }
    }
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub description: String,
    pub spec: String,
    pub loglik: f64,
    pub n_params: usize,
    pub criterion: f64,
    pub accepted: bool,
    /// Failure message for candidates that could not be fitted.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub entries: Vec<TraceEntry>,
}

impl SearchTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.accepted)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["step", "move", "model", "loglik", "n_params", "criterion", "accepted", "error"])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for e in &self.entries {
            w.write_record([
                e.step.to_string(),
                e.description.clone(),
                e.spec.clone(),
                format!("{:?}", e.loglik),
                e.n_params.to_string(),
                format!("{:?}", e.criterion),
                e.accepted.to_string(),
                e.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How a candidate is started.
enum Start {
    /// Fresh k-means restarts.
    Fresh,
    /// EM from the incumbent's values mapped onto the new spec.
    Warm,
}

struct Move {
    description: String,
    spec: ModelSpec,
    start: Start,
}

fn with_kind(net: &NetworkSpec, kind: NetworkKind) -> NetworkSpec {
    NetworkSpec::new(kind, if kind.is_regression() { net.covariates.clone() } else { Vec::new() })
}

/// The regression counterpart used when a covariate enters a constant network.
fn regression_kind(kind: NetworkKind) -> NetworkKind {
    match kind {
        NetworkKind::C => NetworkKind::V,
        NetworkKind::I => NetworkKind::E,
        k => k,
    }
}

fn neighbourhood(spec: &ModelSpec, cfg: &SearchConfig) -> Vec<Move> {
    let mut moves = Vec::new();
    let g = spec.g;
    if g < cfg.max_g {
        let mut next = spec.clone();
        next.g = g + 1;
        if g == 1 {
            next.gating = NetworkSpec::constant(NetworkKind::C);
            let expand = |k: NetworkKind| match k {
                NetworkKind::I => NetworkKind::C,
                NetworkKind::E => NetworkKind::V,
                k => k,
            };
            for a in &mut next.alpha {
                a.kind = expand(a.kind);
            }
            next.beta.kind = expand(next.beta.kind);
        }
        moves.push(Move {
            description: format!("G {} -> {}", g, g + 1),
            spec: next,
            start: Start::Fresh,
        });
    }

    // Single-slot type changes that keep the covariate sets.
    let swap = |k: NetworkKind| match k {
        NetworkKind::V => NetworkKind::E,
        NetworkKind::E => NetworkKind::V,
        NetworkKind::C => NetworkKind::I,
        NetworkKind::I => NetworkKind::C,
    };
    if g > 1 {
        if !spec.gating.kind.is_regression() || spec.gating.kind == NetworkKind::E {
            let to = match spec.gating.kind {
                NetworkKind::C => Some(NetworkKind::E),
                NetworkKind::E => Some(NetworkKind::C),
                _ => None,
            };
            if let Some(to) = to {
                let mut s = spec.clone();
                s.gating = NetworkSpec::constant(to);
                moves.push(Move {
                    description: format!("gating {} -> {}", spec.gating.kind, to),
                    spec: s,
                    start: Start::Warm,
                });
            }
        }
        let to = swap(spec.alpha[0].kind);
        let mut s = spec.clone();
        for a in &mut s.alpha {
            *a = with_kind(a, to);
        }
        moves.push(Move {
            description: format!("alpha {} -> {}", spec.alpha[0].kind, to),
            spec: s,
            start: Start::Warm,
        });
        let to = swap(spec.beta.kind);
        let mut s = spec.clone();
        s.beta = with_kind(&spec.beta, to);
        moves.push(Move {
            description: format!("beta {} -> {}", spec.beta.kind, to),
            spec: s,
            start: Start::Warm,
        });
    }

    for k in 0..3 {
        for c in &cfg.candidates.alpha[k] {
            if spec.alpha[k].covariates.contains(c) {
                continue;
            }
            let mut s = spec.clone();
            let kind = regression_kind(spec.alpha[0].kind);
            for a in &mut s.alpha {
                a.kind = kind;
            }
            s.alpha[k].covariates.push(c.clone());
            moves.push(Move {
                description: format!("alpha{} + {c}", k + 1),
                spec: s,
                start: Start::Warm,
            });
        }
    }
    for c in &cfg.candidates.beta {
        if spec.beta.covariates.contains(c) {
            continue;
        }
        let mut s = spec.clone();
        s.beta.kind = regression_kind(spec.beta.kind);
        s.beta.covariates.push(c.clone());
        moves.push(Move {
            description: format!("beta + {c}"),
            spec: s,
            start: Start::Warm,
        });
    }
    if g > 1 {
        for c in &cfg.candidates.gating {
            if spec.gating.covariates.contains(c) {
                continue;
            }
            let mut s = spec.clone();
            s.gating.kind = NetworkKind::V;
            s.gating.covariates.push(c.clone());
            moves.push(Move {
                description: format!("gating + {c}"),
                spec: s,
                start: Start::Warm,
            });
        }
    }
    moves
}

fn mixing_proportions(model: &FittedModel) -> Vec<f64> {
    let g = model.g();
    match &model.responsibilities {
        Some(z) => {
            let mut s = vec![0.0; g];
            for row in z.chunks(g) {
                for (a, b) in s.iter_mut().zip(row) {
                    *a += b;
                }
            }
            let t: f64 = s.iter().sum();
            s.iter().map(|v| v / t).collect()
        }
        None => vec![1.0 / g as f64; g],
    }
}

fn pad(mut v: Vec<f64>, p: usize) -> Vec<f64> {
    v.resize(p, 0.0);
    v
}

fn convert_expert(old: &ExpertParams, kind: NetworkKind, g: usize, p: usize, props: &[f64]) -> ExpertParams {
    let logs: Vec<Vec<f64>> = (0..g).map(|c| old.log_coefs(c)).collect();
    let pooled = || {
        let width = logs.iter().map(Vec::len).max().unwrap_or(1);
        let mut out = vec![0.0; width];
        for (l, w) in logs.iter().zip(props) {
            for (o, v) in out.iter_mut().zip(l) {
                *o += w * v;
            }
        }
        out
    };
    match kind {
        NetworkKind::C => ExpertParams::Constant(logs.iter().map(|l| l[0].exp()).collect()),
        NetworkKind::I => ExpertParams::Global(pooled()[0].exp()),
        NetworkKind::V => ExpertParams::Regression(logs.into_iter().map(|l| pad(l, p)).collect()),
        NetworkKind::E => ExpertParams::Shared(pad(pooled(), p)),
    }
}

/// Maps the incumbent's values onto `spec`: new coefficients start at zero,
/// pooled networks take the proportion-weighted average of log values.
fn warm_start(incumbent: &FittedModel, spec: &ModelSpec, data: &Dataset) -> Result<FittedModel> {
    let g = spec.g;
    let props = mixing_proportions(incumbent);
    let schema = schema_for(data, spec)?;
    let designs = crate::moe::ModelDesigns::build(data, spec, &schema)?;
    let dims = designs.dims();
    let gating = match spec.gating.kind {
        NetworkKind::E | NetworkKind::I => GatingParams::Equal,
        NetworkKind::C => GatingParams::Weights(props.clone()),
        NetworkKind::V => match &incumbent.gating {
            GatingParams::Regression(c) => GatingParams::Regression(c.iter().map(|r| pad(r.clone(), dims.gating)).collect()),
            _ => GatingParams::Regression(
                (0..g - 1)
                    .map(|c| pad(vec![(props[c] / props[g - 1]).ln()], dims.gating))
                    .collect(),
            ),
        },
    };
    let alpha = std::array::from_fn(|k| convert_expert(&incumbent.alpha[k], spec.alpha[k].kind, g, dims.alpha[k], &props));
    let beta = convert_expert(&incumbent.beta, spec.beta.kind, g, dims.beta, &props);
    Ok(FittedModel {
        spec: spec.clone(),
        schema,
        gating,
        alpha,
        beta,
        loglik: f64::NAN,
        n_params: 0,
        n_obs: incumbent.n_obs,
        converged: false,
        iterations: 0,
        responsibilities: None,
    })
}

/// Forward stepwise search from a single component without covariates.
/// Each step fits every neighbour of the incumbent and moves to the best
/// one if it lowers the criterion by more than [`IMPROVEMENT_THRESHOLD`].
/// The incumbent and the best candidate are both run to [`POLISH_TOL`]
/// before that comparison.
pub fn stepwise(
    data: &Dataset,
    cfg: &SearchConfig,
    em_cfg: &EMConfig,
    q: &QuadratureConfig,
) -> Result<(FittedModel, SearchTrace)> {
    if cfg.max_g == 0 {
        return Err(Error::InvalidParameter("max_g must be at least 1".into()));
    }
    for c in cfg
        .candidates
        .gating
        .iter()
        .chain(cfg.candidates.alpha.iter().flatten())
        .chain(&cfg.candidates.beta)
    {
        data.kind(c)?;
    }
    let mut trace = SearchTrace::default();
    let step_cfg = |step: usize| EMConfig {
        seed: restart_seed(em_cfg.seed, 10_000 + step),
        ..em_cfg.clone()
    };
    let polish_cfg = EMConfig {
        tol: em_cfg.tol.min(POLISH_TOL),
        max_iter: em_cfg.max_iter.max(20_000),
        ..em_cfg.clone()
    };
    // Continues EM to tight convergence; keeps the input if that fails.
    let polish = |m: FittedModel| match fit_from(data, &m, &polish_cfg, q) {
        Ok((p, _)) if p.loglik >= m.loglik => p,
        _ => m,
    };
    let mut incumbent = polish(fit(data, &ModelSpec::constant(1), &step_cfg(0), q)?);
    let mut best = cfg.criterion.evaluate(&incumbent);
    trace.entries.push(TraceEntry {
        step: 0,
        description: "start".into(),
        spec: incumbent.spec.describe(),
        loglik: incumbent.loglik,
        n_params: incumbent.n_params,
        criterion: best,
        accepted: true,
        error: None,
    });

    for step in 1..=cfg.max_steps {
        let moves = neighbourhood(&incumbent.spec, cfg);
        let ecfg = step_cfg(step);
        let results: Vec<Result<FittedModel>> = moves
            .par_iter()
            .map(|mv| match mv.start {
                Start::Fresh => fit(data, &mv.spec, &ecfg, q),
                Start::Warm => {
                    let start = warm_start(&incumbent, &mv.spec, data)?;
                    fit_from(data, &start, &ecfg, q).map(|(m, _)| m)
                }
            })
            .collect();
        let first = trace.entries.len();
        let mut choice: Option<(usize, f64)> = None;
        for (j, (mv, res)) in moves.iter().zip(&results).enumerate() {
            match res {
                Ok(m) => {
                    let crit = cfg.criterion.evaluate(m);
                    if choice.is_none_or(|(_, c)| crit < c) {
                        choice = Some((j, crit));
                    }
                    trace.entries.push(TraceEntry {
                        step,
                        description: mv.description.clone(),
                        spec: m.spec.describe(),
                        loglik: m.loglik,
                        n_params: m.n_params,
                        criterion: crit,
                        accepted: false,
                        error: None,
                    });
                }
                Err(e) => trace.entries.push(TraceEntry {
                    step,
                    description: mv.description.clone(),
                    spec: mv.spec.describe(),
                    loglik: f64::NAN,
                    n_params: 0,
                    criterion: f64::NAN,
                    accepted: false,
                    error: Some(e.to_string()),
                }),
            }
        }
        let Some((j, _)) = choice else { break };
        let candidate = polish(results.into_iter().nth(j).expect("index in range")?);
        let crit = cfg.criterion.evaluate(&candidate);
        let entry = &mut trace.entries[first + j];
        entry.loglik = candidate.loglik;
        entry.criterion = crit;
        if crit < best - IMPROVEMENT_THRESHOLD {
            entry.accepted = true;
            best = crit;
            incumbent = candidate;
        } else {
            break;
        }
    }
    Ok((incumbent, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn criterion_arithmetic() {
        assert_relative_eq!(aic(-2079.97, 4), 4167.94, epsilon = 1e-9);
        assert_relative_eq!(bic(-2079.97, 4, 500), 4184.80, epsilon = 5e-3);
        assert_relative_eq!(aic(-1969.98, 9), 3957.96, epsilon = 1e-9);
        assert_relative_eq!(bic(-1969.98, 9, 500), 3995.89, epsilon = 5e-3);
        assert_eq!(icl(10.0, &[1.0, 0.0, 0.0, 1.0]), 10.0);
        assert!(icl(10.0, &[0.5, 0.5]) > 10.0);
    }

    #[test]
    fn criterion_names() {
        assert_eq!("AIC".parse::<Criterion>().unwrap(), Criterion::Aic);
        assert!("foo".parse::<Criterion>().is_err());
    }

    #[test]
    fn neighbourhood_of_single_component() {
        let cfg = SearchConfig {
            candidates: Candidates::everywhere(&["w1".into(), "w2".into()]),
            ..Default::default()
        };
        let moves = neighbourhood(&ModelSpec::constant(1), &cfg);
        let names: Vec<&str> = moves.iter().map(|m| m.description.as_str()).collect();
        assert_eq!(names[0], "G 1 -> 2");
        assert_eq!(moves[0].spec.name(), "CCC");
        // no gating additions and no type moves while G = 1
        assert_eq!(moves.len(), 1 + 3 * 2 + 2);
        assert!(moves.iter().all(|m| m.spec.validate().is_ok()));
    }

    #[test]
    fn neighbourhood_of_two_components() {
        let cfg = SearchConfig {
            candidates: Candidates::everywhere(&["w1".into()]),
            max_g: 2,
            ..Default::default()
        };
        let moves = neighbourhood(&ModelSpec::constant(2), &cfg);
        let names: Vec<String> = moves.iter().map(|m| format!("{} {}", m.description, m.spec.name())).collect();
        assert_eq!(
            names,
            vec![
                "gating C -> E ECC",
                "alpha C -> I CIC",
                "beta C -> I CCI",
                "alpha1 + w1 CVC",
                "alpha2 + w1 CVC",
                "alpha3 + w1 CVC",
                "beta + w1 CCV",
                "gating + w1 VCC",
            ]
        );
        assert!(moves.iter().all(|m| m.spec.validate().is_ok()));
    }
}
