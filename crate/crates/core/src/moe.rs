//! The bivariate gamma mixture-of-experts model family: specifications,
//! parameter storage, link functions and predictions.

use std::fmt;
use std::str::FromStr;

use crate::bgdist::{moments, BGParams, Moments};
use crate::data::{ColumnKind, Dataset, Design};
use crate::error::{Error, Result};

/// How one network depends on the component and on covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    /// Constant per component (for the gating: free mixing weights).
    C,
    /// Component-specific log-linear regression (gating: multinomial logistic).
    V,
    /// Regression shared by all components (gating: equal weights).
    E,
    /// One constant shared by all components.
    I,
}

impl NetworkKind {
    pub fn letter(self) -> char {
        match self {
            NetworkKind::C => 'C',
            NetworkKind::V => 'V',
            NetworkKind::E => 'E',
            NetworkKind::I => 'I',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'C' => Some(NetworkKind::C),
            'V' => Some(NetworkKind::V),
            'E' => Some(NetworkKind::E),
            'I' => Some(NetworkKind::I),
            _ => None,
        }
    }

    /// Whether the network is a regression on covariates.
    pub fn is_regression(self) -> bool {
        matches!(self, NetworkKind::V | NetworkKind::E)
    }

    /// Whether the network carries separate values per component.
    pub fn is_component_specific(self) -> bool {
        matches!(self, NetworkKind::C | NetworkKind::V)
    }

    /// The single-component counterpart: C collapses to I and V to E.
    pub fn collapsed(self) -> Self {
        match self {
            NetworkKind::C => NetworkKind::I,
            NetworkKind::V => NetworkKind::E,
            k => k,
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// The letters of a model type: gating, shapes, rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelType {
    pub gating: NetworkKind,
    pub alpha: NetworkKind,
    pub beta: NetworkKind,
}

impl FromStr for ModelType {
    type Err = Error;

    /// Accepts three letters (`VCC`) or, for single-component models, two
    /// (`II`), in which case the gating slot is `E`.
    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.trim().chars().collect();
        let kinds = letters
            .iter()
            .map(|&c| NetworkKind::from_letter(c))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidParameter(format!("model type '{s}' contains a letter other than C, V, E, I")))?;
        let t = match kinds.as_slice() {
            [a, b] => ModelType {
                gating: NetworkKind::E,
                alpha: *a,
                beta: *b,
            },
            [g, a, b] => ModelType {
                gating: *g,
                alpha: *a,
                beta: *b,
            },
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "model type '{s}' must have two or three letters"
                )))
            }
        };
        if t.gating == NetworkKind::I {
            return Err(Error::InvalidParameter("the gating network admits only C, V or E".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub covariates: Vec<String>,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, covariates: Vec<String>) -> Self {
        Self { kind, covariates }
    }

    pub fn constant(kind: NetworkKind) -> Self {
        Self {
            kind,
            covariates: Vec::new(),
        }
    }
}

/// One member of the model family.
///
/// Regression networks (V/E) may have an empty covariate list, in which
/// case they are intercept-only reparameterizations of C/I.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub g: usize,
    pub gating: NetworkSpec,
    pub alpha: [NetworkSpec; 3],
    pub beta: NetworkSpec,
}

impl ModelSpec {
    /// Builds a spec from a type string and covariate lists. With `g = 1`
    /// the type collapses: C becomes I, V becomes E, and the gating is
    /// dropped.
    pub fn build(
        model_type: &str,
        g: usize,
        gating: Vec<String>,
        alpha: [Vec<String>; 3],
        beta: Vec<String>,
    ) -> Result<Self> {
        let t: ModelType = model_type.parse()?;
        let [a1, a2, a3] = alpha;
        let mut spec = ModelSpec {
            g,
            gating: NetworkSpec::new(t.gating, gating),
            alpha: [
                NetworkSpec::new(t.alpha, a1),
                NetworkSpec::new(t.alpha, a2),
                NetworkSpec::new(t.alpha, a3),
            ],
            beta: NetworkSpec::new(t.beta, beta),
        };
        if g == 1 {
            spec.gating = NetworkSpec::constant(NetworkKind::E);
            for net in spec.alpha.iter_mut().chain(std::iter::once(&mut spec.beta)) {
                net.kind = net.kind.collapsed();
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Intercept-only `CC` (or `II` when `g = 1`).
    pub fn constant(g: usize) -> Self {
        let kind = if g == 1 { NetworkKind::I } else { NetworkKind::C };
        let gating = if g == 1 { NetworkKind::E } else { NetworkKind::C };
        ModelSpec {
            g,
            gating: NetworkSpec::constant(gating),
            alpha: std::array::from_fn(|_| NetworkSpec::constant(kind)),
            beta: NetworkSpec::constant(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 {
            return Err(Error::InvalidParameter("component count must be at least 1".into()));
        }
        if self.gating.kind == NetworkKind::I {
            return Err(Error::InvalidParameter("the gating network admits only C, V or E".into()));
        }
        let kind = self.alpha[0].kind;
        if self.alpha.iter().any(|a| a.kind != kind) {
            return Err(Error::InvalidParameter("the three shape networks must share one kind".into()));
        }
        let nets = [("gating", &self.gating), ("alpha1", &self.alpha[0]), ("alpha2", &self.alpha[1]), ("alpha3", &self.alpha[2]), ("beta", &self.beta)];
        for (name, net) in nets {
            if !net.kind.is_regression() && !net.covariates.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "{name} network of kind {} takes no covariates",
                    net.kind
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for c in &net.covariates {
                if !seen.insert(c) {
                    return Err(Error::InvalidParameter(format!("{name} network lists '{c}' twice")));
                }
            }
        }
        if self.g == 1 {
            if self.gating.kind != NetworkKind::E || !self.gating.covariates.is_empty() {
                return Err(Error::InvalidParameter("a single-component model has no gating network".into()));
            }
            if self.alpha[0].kind.is_component_specific() || self.beta.kind.is_component_specific() {
                return Err(Error::InvalidParameter(
                    "a single-component model must be one of II, EE, EI, IE".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn model_type(&self) -> ModelType {
        ModelType {
            gating: self.gating.kind,
            alpha: self.alpha[0].kind,
            beta: self.beta.kind,
        }
    }

    /// Type string: gating, shape and rate letters; two letters when `g = 1`.
    pub fn name(&self) -> String {
        let t = self.model_type();
        if self.g == 1 {
            format!("{}{}", t.alpha, t.beta)
        } else {
            format!("{}{}{}", t.gating, t.alpha, t.beta)
        }
    }

    /// The five networks in storage order: gating, α1, α2, α3, β.
    pub fn networks(&self) -> [&NetworkSpec; 5] {
        [&self.gating, &self.alpha[0], &self.alpha[1], &self.alpha[2], &self.beta]
    }

    /// Every covariate referenced by any network, in first-mention order.
    pub fn covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for net in self.networks() {
            for c in &net.covariates {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    /// Short human-readable description including covariates.
    pub fn describe(&self) -> String {
        let list = |n: &NetworkSpec| {
            if n.kind.is_regression() {
                format!("{{{}}}", n.covariates.join(","))
            } else {
                "-".to_string()
            }
        };
        format!(
            "{} G={} gating={} alpha1={} alpha2={} alpha3={} beta={}",
            self.name(),
            self.g,
            list(&self.gating),
            list(&self.alpha[0]),
            list(&self.alpha[1]),
            list(&self.alpha[2]),
            list(&self.beta)
        )
    }
}

/// Design widths (intercept included) of the five networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkDims {
    pub gating: usize,
    pub alpha: [usize; 3],
    pub beta: usize,
}

/// Number of free parameters of a spec with the given design widths.
pub fn param_count(spec: &ModelSpec, dims: &NetworkDims) -> usize {
    let g = spec.g;
    let gating = match spec.gating.kind {
        NetworkKind::V => (g - 1) * dims.gating,
        NetworkKind::C => g - 1,
        _ => 0,
    };
    let expert = |kind: NetworkKind, dim: usize| match kind {
        NetworkKind::V => g * dim,
        NetworkKind::E => dim,
        NetworkKind::C => g,
        NetworkKind::I => 1,
    };
    gating
        + (0..3).map(|k| expert(spec.alpha[k].kind, dims.alpha[k])).sum::<usize>()
        + expert(spec.beta.kind, dims.beta)
}

/// Mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub enum GatingParams {
    /// `1/G` for every component.
    Equal,
    /// Free weights summing to one.
    Weights(Vec<f64>),
    /// Multinomial-logistic coefficients for components `0..G-1`; the last
    /// component is the reference with zero coefficients.
    Regression(Vec<Vec<f64>>),
}

/// Values of one expert network (a shape or the rate).
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertParams {
    /// One positive value per component.
    Constant(Vec<f64>),
    /// One log-link coefficient vector per component.
    Regression(Vec<Vec<f64>>),
    /// One log-link coefficient vector for all components.
    Shared(Vec<f64>),
    /// One positive value for all components.
    Global(f64),
}

impl ExpertParams {
    #[inline]
    pub fn value(&self, g: usize, design: &Design, i: usize) -> Result<f64> {
        match self {
            ExpertParams::Constant(v) => Ok(v[g]),
            ExpertParams::Global(v) => Ok(*v),
            ExpertParams::Regression(c) => exp_link(design.dot(i, &c[g])),
            ExpertParams::Shared(c) => exp_link(design.dot(i, c)),
        }
    }

    fn permute(&mut self, order: &[usize]) {
        match self {
            ExpertParams::Constant(v) => *v = order.iter().map(|&g| v[g]).collect(),
            ExpertParams::Regression(c) => *c = order.iter().map(|&g| c[g].clone()).collect(),
            _ => {}
        }
    }

    /// Log-scale coefficients of component `g` (a one-element vector for
    /// constants).
    pub fn log_coefs(&self, g: usize) -> Vec<f64> {
        match self {
            ExpertParams::Constant(v) => vec![v[g].ln()],
            ExpertParams::Global(v) => vec![v.ln()],
            ExpertParams::Regression(c) => c[g].clone(),
            ExpertParams::Shared(c) => c.clone(),
        }
    }
}

#[inline]
fn exp_link(eta: f64) -> Result<f64> {
    let v = eta.exp();
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Overflow(eta))
    }
}

/// `exp(coefs · w)`, with `w` carrying the leading intercept.
pub fn link_alpha(coefs: &[f64], w: &[f64]) -> Result<f64> {
    if coefs.len() != w.len() {
        return Err(Error::Dimension {
            expected: coefs.len(),
            found: w.len(),
        });
    }
    exp_link(coefs.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Softmax over `coefs[g] · w0` with an implicit zero row for the last
/// component.
pub fn gating_probs(coefs: &[Vec<f64>], w0: &[f64]) -> Vec<f64> {
    let mut eta: Vec<f64> = coefs.iter().map(|c| c.iter().zip(w0).map(|(a, b)| a * b).sum()).collect();
    eta.push(0.0);
    softmax_in_place(&mut eta);
    eta
}

fn softmax_in_place(eta: &mut [f64]) {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for e in eta.iter_mut() {
        *e = (*e - m).exp();
        s += *e;
    }
    for e in eta.iter_mut() {
        *e /= s;
    }
}

/// Log-softmax of `eta` written into `out`.
pub(crate) fn log_softmax(eta: &[f64], out: &mut [f64]) {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + eta.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    for (o, e) in out.iter_mut().zip(eta) {
        *o = e - lse;
    }
}

impl GatingParams {
    /// Log mixing weights of observation `i` written into `out` (length G).
    pub fn log_weights(&self, design: &Design, i: usize, out: &mut [f64]) {
        let g = out.len();
        match self {
            GatingParams::Equal => out.fill(-(g as f64).ln()),
            GatingParams::Weights(w) => {
                for (o, t) in out.iter_mut().zip(w) {
                    *o = t.ln();
                }
            }
            GatingParams::Regression(c) => {
                let mut eta = vec![0.0; g];
                for (e, row) in eta.iter_mut().zip(c) {
                    *e = design.dot(i, row);
                }
                log_softmax(&eta, out);
            }
        }
    }

    fn permute(&mut self, order: &[usize]) {
        match self {
            GatingParams::Equal => {}
            GatingParams::Weights(w) => *w = order.iter().map(|&g| w[g]).collect(),
            GatingParams::Regression(c) => {
                let d = c.first().map_or(0, Vec::len);
                let mut full = c.clone();
                full.push(vec![0.0; d]);
                let reordered: Vec<Vec<f64>> = order.iter().map(|&g| full[g].clone()).collect();
                let reference = reordered.last().cloned().unwrap_or_default();
                *c = reordered[..reordered.len() - 1]
                    .iter()
                    .map(|row| row.iter().zip(&reference).map(|(a, b)| a - b).collect())
                    .collect();
            }
        }
    }
}

/// Per-network design matrices for one dataset.
#[derive(Debug, Clone)]
pub struct ModelDesigns {
    pub gating: Design,
    pub alpha: [Design; 3],
    pub beta: Design,
}

impl ModelDesigns {
    /// Builds the designs of `spec` over `data` using the column encodings
    /// in `schema`.
    pub fn build(data: &Dataset, spec: &ModelSpec, schema: &[(String, ColumnKind)]) -> Result<Self> {
        let n = data.len();
        let make = |net: &NetworkSpec| -> Result<Design> {
            if !net.kind.is_regression() {
                return Ok(Design::intercept(n));
            }
            let kinds = net
                .covariates
                .iter()
                .map(|c| {
                    schema
                        .iter()
                        .find(|(name, _)| name == c)
                        .map(|(_, k)| k.clone())
                        .ok_or_else(|| Error::Data(format!("unknown covariate column '{c}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            data.design_with(&net.covariates, &kinds)
        };
        Ok(Self {
            gating: make(&spec.gating)?,
            alpha: [make(&spec.alpha[0])?, make(&spec.alpha[1])?, make(&spec.alpha[2])?],
            beta: make(&spec.beta)?,
        })
    }

    pub fn nrows(&self) -> usize {
        self.gating.nrows()
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            gating: self.gating.ncols(),
            alpha: [self.alpha[0].ncols(), self.alpha[1].ncols(), self.alpha[2].ncols()],
            beta: self.beta.ncols(),
        }
    }
}

/// The encodings of every covariate `spec` references, read from `data`.
pub fn schema_for(data: &Dataset, spec: &ModelSpec) -> Result<Vec<(String, ColumnKind)>> {
    spec.covariates()
        .into_iter()
        .map(|c| {
            let k = data.kind(&c)?;
            Ok((c, k))
        })
        .collect()
}

/// A model with concrete parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// Encodings of the referenced covariates.
    pub schema: Vec<(String, ColumnKind)>,
    pub gating: GatingParams,
    pub alpha: [ExpertParams; 3],
    pub beta: ExpertParams,
    pub loglik: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Row-major `n × G` posterior membership probabilities of the
    /// training rows. Not persisted.
    pub responsibilities: Option<Vec<f64>>,
}

/// Per-observation parameters of every component, row-major `n × G`.
#[derive(Debug, Clone)]
pub struct ParamTable {
    pub g: usize,
    pub alpha: [Vec<f64>; 3],
    pub beta: Vec<f64>,
    pub log_tau: Vec<f64>,
}

impl ParamTable {
    #[inline]
    pub fn params(&self, i: usize, g: usize) -> BGParams {
        let j = i * self.g + g;
        BGParams {
            alpha1: self.alpha[0][j],
            alpha2: self.alpha[1][j],
            alpha3: self.alpha[2][j],
            beta: self.beta[j],
        }
    }

    pub fn tau(&self, i: usize) -> Vec<f64> {
        self.log_tau[i * self.g..(i + 1) * self.g].iter().map(|l| l.exp()).collect()
    }
}

impl FittedModel {
    pub fn g(&self) -> usize {
        self.spec.g
    }

    pub fn designs(&self, data: &Dataset) -> Result<ModelDesigns> {
        ModelDesigns::build(data, &self.spec, &self.schema)
    }

    /// Resolves every network for every observation and component, checking
    /// that each parameter set is valid.
    pub fn param_table(&self, designs: &ModelDesigns) -> Result<ParamTable> {
        let n = designs.nrows();
        let g = self.g();
        let mut t = ParamTable {
            g,
            alpha: [vec![0.0; n * g], vec![0.0; n * g], vec![0.0; n * g]],
            beta: vec![0.0; n * g],
            log_tau: vec![0.0; n * g],
        };
        for i in 0..n {
            self.gating
                .log_weights(&designs.gating, i, &mut t.log_tau[i * g..(i + 1) * g]);
            for c in 0..g {
                let j = i * g + c;
                for k in 0..3 {
                    t.alpha[k][j] = self.alpha[k].value(c, &designs.alpha[k], i)?;
                }
                t.beta[j] = self.beta.value(c, &designs.beta, i)?;
                t.params(i, c).validate()?;
            }
        }
        Ok(t)
    }

    /// Component parameters for observation `i`.
    pub fn observation_params(&self, designs: &ModelDesigns, i: usize) -> Result<Vec<BGParams>> {
        if i >= designs.nrows() {
            return Err(Error::Dimension {
                expected: designs.nrows(),
                found: i,
            });
        }
        (0..self.g())
            .map(|c| {
                let p = BGParams {
                    alpha1: self.alpha[0].value(c, &designs.alpha[0], i)?,
                    alpha2: self.alpha[1].value(c, &designs.alpha[1], i)?,
                    alpha3: self.alpha[2].value(c, &designs.alpha[2], i)?,
                    beta: self.beta.value(c, &designs.beta, i)?,
                };
                p.validate()?;
                Ok(p)
            })
            .collect()
    }

    /// Mixing weights for observation `i`.
    pub fn gating_weights(&self, designs: &ModelDesigns, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.g()];
        self.gating.log_weights(&designs.gating, i, &mut out);
        out.iter().map(|l| l.exp()).collect()
    }

    /// Mixture mean `(ŷ1, ŷ2)` for observation `i`.
    pub fn predict_mean(&self, designs: &ModelDesigns, i: usize) -> Result<[f64; 2]> {
        let comps = self.observation_params(designs, i)?;
        let tau = self.gating_weights(designs, i);
        Ok(mixture_mean(&comps, &tau))
    }

    /// MAP component per training row; ties go to the lower index.
    pub fn classify(&self) -> Result<Vec<usize>> {
        let z = self
            .responsibilities
            .as_ref()
            .ok_or_else(|| Error::Data("model carries no responsibilities".into()))?;
        Ok(classify_rows(z, self.g()))
    }

    /// Reorders components by ascending average (over `designs` rows) of
    /// the component mean of `Y1 + Y2`, re-referencing a regression gating
    /// to the new last component.
    pub fn canonicalize(&mut self, designs: &ModelDesigns) -> Result<()> {
        let g = self.g();
        if g == 1 {
            return Ok(());
        }
        let n = designs.nrows();
        let mut avg = vec![0.0; g];
        for i in 0..n {
            for (c, p) in self.observation_params(designs, i)?.iter().enumerate() {
                avg[c] += p.total_mean();
            }
        }
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(a.cmp(&b)));
        self.permute(&order);
        Ok(())
    }

    /// Relabels so that new component `j` is old component `order[j]`.
    pub fn permute(&mut self, order: &[usize]) {
        self.gating.permute(order);
        for a in &mut self.alpha {
            a.permute(order);
        }
        self.beta.permute(order);
        if let Some(z) = &mut self.responsibilities {
            let g = order.len();
            for row in z.chunks_mut(g) {
                let old = row.to_vec();
                for (j, &o) in order.iter().enumerate() {
                    row[j] = old[o];
                }
            }
        }
    }
}

/// Row-wise argmax of a row-major `n × g` matrix, ties to the lower index.
pub fn classify_rows(z: &[f64], g: usize) -> Vec<usize> {
    z.chunks(g)
        .map(|row| {
            let mut best = 0;
            for c in 1..g {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn mixture_mean(comps: &[BGParams], weights: &[f64]) -> [f64; 2] {
    let mut m = [0.0; 2];
    for (p, w) in comps.iter().zip(weights) {
        let mo = moments(p);
        m[0] += w * mo.mean[0];
        m[1] += w * mo.mean[1];
    }
    m
}

/// Mean and covariance of a finite mixture of bivariate gamma components
/// by the laws of total expectation and total variance.
pub fn mixture_moments(components: &[BGParams], weights: &[f64]) -> Result<Moments> {
    if components.len() != weights.len() || components.is_empty() {
        return Err(Error::Dimension {
            expected: components.len(),
            found: weights.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("mixture weights must be non-negative and sum to 1, got {total}")));
    }
    let mean = mixture_mean(components, weights);
    let mut cov = [[0.0; 2]; 2];
    for (p, w) in components.iter().zip(weights) {
        let mo = moments(p);
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += w * (mo.cov[a][b] + (mo.mean[a] - mean[a]) * (mo.mean[b] - mean[b]));
            }
        }
    }
    Ok(Moments { mean, cov })
}
