//! Expectation / conditional-maximization fitting.

mod estep;
mod identifiability;
mod init;
pub mod mstep;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand::RngCore;

use crate::data::{ColumnKind, Dataset, Design};
use crate::error::{Error, Result};
use crate::moe::{param_count, schema_for, ExpertParams, FittedModel, ModelDesigns, ModelSpec, ParamTable};
use crate::quad::QuadratureConfig;

pub use estep::{e_step_table, EStepCache};
pub use identifiability::{check_identifiability, BlockReport, IdentifiabilityReport};
pub use mstep::{m_step_alpha, m_step_beta, m_step_gating, InnerStats};

#[derive(Debug, Clone, PartialEq)]
pub struct EMConfig {
    /// Relative log-likelihood change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Largest tolerated relative log-likelihood decrease per iteration.
    pub allow_decrease: f64,
    pub use_aitken: bool,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 1000,
            restarts: 5,
            seed: 0,
            allow_decrease: 1e-6,
            use_aitken: false,
        }
    }
}

impl EMConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 1e-8 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tol must be at least 1e-8, got {}", self.tol)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.allow_decrease >= 0.0) {
            return Err(Error::InvalidParameter("allow_decrease must be non-negative".into()));
        }
        Ok(())
    }
}

/// One EM iteration as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub rel_change: f64,
    /// Inner optimizer iterations for gating, α1, α2, α3, β.
    pub inner: [usize; 5],
}

/// What happened in one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub index: usize,
    pub seed: u64,
    pub result: std::result::Result<f64, String>,
    pub trace: Vec<IterationRecord>,
}

/// Fitted champion plus per-restart diagnostics.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: FittedModel,
    pub champion: usize,
    pub restarts: Vec<RestartOutcome>,
}

impl FitReport {
    pub fn champion_trace(&self) -> &[IterationRecord] {
        &self.restarts[self.champion].trace
    }
}

/// Writes an iteration trace as CSV.
pub fn write_trace<W: Write>(trace: &[IterationRecord], mut w: W) -> Result<()> {
    writeln!(w, "iteration,loglik,rel_change,inner_gating,inner_alpha1,inner_alpha2,inner_alpha3,inner_beta")?;
    for r in trace {
        writeln!(
            w,
            "{},{:?},{:?},{},{},{},{},{}",
            r.iteration, r.loglik, r.rel_change, r.inner[0], r.inner[1], r.inner[2], r.inner[3], r.inner[4]
        )?;
    }
    Ok(())
}

/// Seed of restart `index`, derived from the configured seed.
pub fn restart_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// Smallest admissible effective component size: one more than the widest
/// component-specific design.
fn min_component_size(spec: &ModelSpec, designs: &ModelDesigns) -> usize {
    let nets = spec.networks();
    let d = designs.dims();
    let widths = [d.gating, d.alpha[0], d.alpha[1], d.alpha[2], d.beta];
    let dim = nets
        .iter()
        .zip(widths)
        .filter(|(n, _)| n.kind.is_component_specific())
        .map(|(_, w)| w)
        .max()
        .unwrap_or(1);
    dim + 1
}

/// Responses of `data`, validated for fitting.
fn responses(data: &Dataset, spec: &ModelSpec) -> Result<Vec<[f64; 2]>> {
    let y = data.responses()?.to_vec();
    if y.len() < spec.g {
        return Err(Error::Data(format!("{} observations cannot support {} components", y.len(), spec.g)));
    }
    Ok(y)
}

/// Starting model for restart seed `seed`.
pub fn initialize(data: &Dataset, spec: &ModelSpec, seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    let schema = schema_for(data, spec)?;
    let designs = ModelDesigns::build(data, spec, &schema)?;
    let y = responses(data, spec)?;
    let labels = init::initial_labels(&y, spec.g, min_component_size(spec, &designs), seed)?;
    init::model_from_labels(&y, &designs, spec, &schema, &labels)
}

/// E-step of `model` on `data`.
pub fn e_step(data: &Dataset, model: &FittedModel, q: &QuadratureConfig) -> Result<EStepCache> {
    let designs = model.designs(data)?;
    let table = model.param_table(&designs)?;
    e_step_table(data.responses()?, &table, q)
}

/// Fits `spec` from `cfg.restarts` k-means starts and keeps the best.
pub fn fit(data: &Dataset, spec: &ModelSpec, cfg: &EMConfig, q: &QuadratureConfig) -> Result<FittedModel> {
    fit_with_report(data, spec, cfg, q).map(|r| r.model)
}

pub fn fit_with_report(data: &Dataset, spec: &ModelSpec, cfg: &EMConfig, q: &QuadratureConfig) -> Result<FitReport> {
    cfg.validate()?;
    q.validate()?;
    spec.validate()?;
    let schema = schema_for(data, spec)?;
    let designs = ModelDesigns::build(data, spec, &schema)?;
    let y = responses(data, spec)?;
    let min_size = min_component_size(spec, &designs);
    let restarts = if spec.g == 1 { 1 } else { cfg.restarts };

    let mut outcomes = Vec::with_capacity(restarts);
    let mut best: Option<(usize, FittedModel)> = None;
    for r in 0..restarts {
        let seed = restart_seed(cfg.seed, r);
        let mut trace = Vec::new();
        let result = init::initial_labels(&y, spec.g, min_size, seed)
            .and_then(|labels| init::model_from_labels(&y, &designs, spec, &schema, &labels))
            .and_then(|start| run_em(&y, &designs, start, cfg, q, &mut trace));
        match result {
            Ok(m) => {
                outcomes.push(RestartOutcome {
                    index: r,
                    seed,
                    result: Ok(m.loglik),
                    trace,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => m.loglik > b.loglik + 1e-9,
                };
                if better {
                    best = Some((r, m));
                }
            }
            Err(e) => outcomes.push(RestartOutcome {
                index: r,
                seed,
                result: Err(e.to_string()),
                trace,
            }),
        }
    }
    match best {
        Some((champion, model)) => Ok(FitReport {
            model,
            champion,
            restarts: outcomes,
        }),
        None => {
            let detail: Vec<String> = outcomes
                .iter()
                .map(|o| format!("restart {}: {}", o.index + 1, o.result.as_ref().err().map_or("", |s| s.as_str())))
                .collect();
            Err(Error::Fit(format!("all restarts failed ({})", detail.join("; "))))
        }
    }
}

/// Runs EM from the given parameter values (no initialization).
pub fn fit_from(
    data: &Dataset,
    start: &FittedModel,
    cfg: &EMConfig,
    q: &QuadratureConfig,
) -> Result<(FittedModel, Vec<IterationRecord>)> {
    cfg.validate()?;
    q.validate()?;
    start.spec.validate()?;
    let designs = start.designs(data)?;
    let y = responses(data, &start.spec)?;
    let mut trace = Vec::new();
    let m = run_em(&y, &designs, start.clone(), cfg, q, &mut trace)?;
    Ok((m, trace))
}

fn check_sizes(cache: &EStepCache, min_size: usize) -> Result<()> {
    if cache.g == 1 {
        return Ok(());
    }
    let sizes = cache.component_sizes();
    if let Some((c, s)) = sizes.iter().enumerate().find(|(_, s)| **s < min_size as f64) {
        return Err(Error::Fit(format!(
            "component {} collapsed (effective size {s:.3} < {min_size})",
            c + 1
        )));
    }
    Ok(())
}

fn expert_values(p: &ExpertParams, design: &Design, n: usize, g: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n * g];
    for i in 0..n {
        for c in 0..g {
            out[i * g + c] = p.value(c, design, i)?;
        }
    }
    Ok(out)
}

fn run_em(
    y: &[[f64; 2]],
    designs: &ModelDesigns,
    mut model: FittedModel,
    cfg: &EMConfig,
    q: &QuadratureConfig,
    trace: &mut Vec<IterationRecord>,
) -> Result<FittedModel> {
    let n = y.len();
    let g = model.spec.g;
    let spec = model.spec.clone();
    let min_size = min_component_size(&spec, designs);
    let mut table: ParamTable = model.param_table(designs)?;
    let mut cache = e_step_table(y, &table, q)?;
    check_sizes(&cache, min_size)?;
    let mut history = vec![cache.loglik];
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let mut inner = [0usize; 5];
        let (gating, s) = m_step_gating(spec.gating.kind, &cache.z, g, &designs.gating, &model.gating)?;
        model.gating = gating;
        inner[0] = s.iterations;

        let log_beta: Vec<f64> = table.beta.iter().map(|b| b.ln()).collect();
        for k in 0..3 {
            let (a, s) = m_step_alpha(spec.alpha[k].kind, k, &cache, &designs.alpha[k], &log_beta, &model.alpha[k])?;
            table.alpha[k] = expert_values(&a, &designs.alpha[k], n, g)?;
            model.alpha[k] = a;
            inner[k + 1] = s.iterations;
        }
        let alpha_sum: Vec<f64> = (0..n * g)
            .map(|j| table.alpha[0][j] + table.alpha[1][j] + table.alpha[2][j])
            .collect();
        let (b, s) = m_step_beta(spec.beta.kind, &cache, &designs.beta, &alpha_sum, &model.beta)?;
        model.beta = b;
        inner[4] = s.iterations;

        table = model.param_table(designs)?;
        let previous = cache.loglik;
        cache = e_step_table(y, &table, q)?;
        let ll = cache.loglik;
        let rel = (ll - previous).abs() / previous.abs().max(f64::MIN_POSITIVE);
        trace.push(IterationRecord {
            iteration: it,
            loglik: ll,
            rel_change: rel,
            inner,
        });
        if ll < previous - cfg.allow_decrease * previous.abs() {
            return Err(Error::Fit(format!(
                "log-likelihood decreased at iteration {it}: {previous} -> {ll}"
            )));
        }
        check_sizes(&cache, min_size)?;
        history.push(ll);

        let done = if cfg.use_aitken && history.len() >= 3 {
            let l = &history[history.len() - 3..];
            let denom = l[1] - l[0];
            let a = if denom != 0.0 { (l[2] - l[1]) / denom } else { 0.0 };
            if a > 0.0 && a < 1.0 {
                let limit = l[1] + (l[2] - l[1]) / (1.0 - a);
                (limit - l[2]).abs() < cfg.tol * l[2].abs()
            } else {
                rel < cfg.tol
            }
        } else {
            rel < cfg.tol
        };
        if done {
            converged = true;
            break;
        }
    }

    model.loglik = cache.loglik;
    model.n_params = param_count(&spec, &designs.dims());
    model.n_obs = n;
    model.converged = converged;
    model.iterations = iterations;
    model.responsibilities = Some(cache.z);
    model.canonicalize(designs)?;
    Ok(model)
}

/// Column encodings for a spec over a dataset (re-exported for callers
/// that build starting models by hand).
pub fn schema(data: &Dataset, spec: &ModelSpec) -> Result<Vec<(String, ColumnKind)>> {
    schema_for(data, spec)
}
