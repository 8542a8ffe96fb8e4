//! Run configuration files and density grid specifications.
//!
//! A run configuration is a sectioned key-value file:
//!
//! ```text
//! # comment
//! [model]
//! type = VVC
//! g = 2
//! gating = w1,w2,w3
//! alpha1 = w1,w2
//! [em]
//! restarts = 10
//! seed = 7
//! [search]
//! candidates = w1,w2,w3
//! [output]
//! trace = trace.csv
//! ```
//!
//! Every key is optional; absent keys keep library defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::em::EMConfig;
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;
use crate::select::{Candidates, Criterion, SearchConfig};

/// Model choice as written in a config; covariate lists left unset are
/// treated as empty by front ends.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSettings {
    pub model_type: Option<String>,
    pub g: Option<usize>,
    pub gating: Option<Vec<String>>,
    pub alpha: [Option<Vec<String>>; 3],
    pub beta: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub em: EMConfig,
    pub quadrature: QuadratureConfig,
    pub search: SearchConfig,
    /// Free-form `[output]` entries such as `out`, `trace` or `data`.
    pub paths: BTreeMap<String, String>,
}

fn value<T: FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("invalid value '{v}' for '{key}'")))
}

/// Comma-separated names; an empty value is an empty list.
pub fn parse_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_bool(v: &str, line: usize, key: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::parse(line, format!("invalid boolean '{v}' for '{key}'"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        let mut candidates_all: Option<Vec<String>> = None;
        let mut candidates = Candidates::default();
        let mut per_network = [false; 5];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line, "unterminated section header"))?
                    .trim();
                if !["model", "em", "quadrature", "search", "output"].contains(&name) {
                    return Err(Error::parse(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(line, "expected 'key = value'"))?;
            let (key, v) = (key.trim(), v.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::parse(line, "key outside of any section"))?;
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(Error::parse(line, format!("duplicate key '{key}' in [{sec}]")));
            }
            match (sec, key) {
                ("model", "type") => cfg.model.model_type = Some(v.to_string()),
                ("model", "g") => cfg.model.g = Some(value(v, line, key)?),
                ("model", "gating") => cfg.model.gating = Some(parse_list(v)),
                ("model", "alpha1") => cfg.model.alpha[0] = Some(parse_list(v)),
                ("model", "alpha2") => cfg.model.alpha[1] = Some(parse_list(v)),
                ("model", "alpha3") => cfg.model.alpha[2] = Some(parse_list(v)),
                ("model", "beta") => cfg.model.beta = Some(parse_list(v)),
                ("em", "tol") => cfg.em.tol = value(v, line, key)?,
                ("em", "max_iter") => cfg.em.max_iter = value(v, line, key)?,
                ("em", "restarts") => cfg.em.restarts = value(v, line, key)?,
                ("em", "seed") => cfg.em.seed = value(v, line, key)?,
                ("em", "allow_decrease") => cfg.em.allow_decrease = value(v, line, key)?,
                ("em", "aitken") => cfg.em.use_aitken = parse_bool(v, line, key)?,
                ("quadrature", "tolerance") => cfg.quadrature.relative_tolerance = value(v, line, key)?,
                ("quadrature", "max_levels") => cfg.quadrature.max_levels = value(v, line, key)?,
                ("search", "max_g") => cfg.search.max_g = value(v, line, key)?,
                ("search", "max_steps") => cfg.search.max_steps = value(v, line, key)?,
                ("search", "criterion") => {
                    cfg.search.criterion =
                        Criterion::from_str(v).map_err(|e| Error::parse(line, e))?
                }
                ("search", "candidates") => candidates_all = Some(parse_list(v)),
                ("search", "gating") => {
                    candidates.gating = parse_list(v);
                    per_network[0] = true;
                }
                ("search", "alpha1") | ("search", "alpha2") | ("search", "alpha3") => {
                    let k = (key.as_bytes()[5] - b'1') as usize;
                    candidates.alpha[k] = parse_list(v);
                    per_network[k + 1] = true;
                }
                ("search", "beta") => {
                    candidates.beta = parse_list(v);
                    per_network[4] = true;
                }
                ("output", _) => {
                    cfg.paths.insert(key.to_string(), v.to_string());
                }
                _ => return Err(Error::parse(line, format!("unknown key '{key}' in [{sec}]"))),
            }
        }
        // Per-network lists override the shared one.
        if let Some(all) = candidates_all {
            let base = Candidates::everywhere(&all);
            if !per_network[0] {
                candidates.gating = base.gating;
            }
            for k in 0..3 {
                if !per_network[k + 1] {
                    candidates.alpha[k] = base.alpha[k].clone();
                }
            }
            if !per_network[4] {
                candidates.beta = base.beta;
            }
        }
        cfg.search.candidates = candidates;
        cfg.em.validate().map_err(|e| Error::parse(0, e))?;
        cfg.quadrature.validate().map_err(|e| Error::parse(0, e))?;
        if cfg.search.max_g == 0 {
            return Err(Error::parse(0, "max_g must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// One axis of a density grid: `steps` equal cells over `[min, max]`,
/// evaluated at the cell midpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.steps as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.width();
        (0..self.steps).map(move |i| self.min + (i as f64 + 0.5) * h)
    }
}

impl FromStr for GridAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParameter(format!("grid axis '{s}': {m}"));
        let parts: Vec<&str> = s.split(':').collect();
        let [min, max, steps] = parts[..] else {
            return Err(bad("expected min:max:steps"));
        };
        let min: f64 = min.trim().parse().map_err(|_| bad("min is not a number"))?;
        let max: f64 = max.trim().parse().map_err(|_| bad("max is not a number"))?;
        let steps: usize = steps.trim().parse().map_err(|_| bad("steps is not a count"))?;
        if !(min.is_finite() && max.is_finite()) || min < 0.0 || max <= min {
            return Err(bad("need 0 <= min < max"));
        }
        if steps == 0 || steps > 100_000 {
            return Err(bad("steps must be between 1 and 100000"));
        }
        if (max - min) / steps as f64 <= f64::MIN_POSITIVE {
            return Err(bad("cell width is too small"));
        }
        Ok(GridAxis { min, max, steps })
    }
}

/// Two grid axes written `y1min:y1max:steps,y2min:y2max:steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub y1: GridAxis,
    pub y2: GridAxis,
}

impl GridSpec {
    pub fn cell_area(&self) -> f64 {
        self.y1.width() * self.y2.width()
    }
}

impl FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::InvalidParameter(format!("grid '{s}': expected two comma-separated axes")))?;
        let spec = GridSpec {
            y1: a.parse()?,
            y2: b.parse()?,
        };
        if spec.y1.steps.saturating_mul(spec.y2.steps) > 10_000_000 {
            return Err(Error::InvalidParameter(format!("grid '{s}' has more than 10^7 points")));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# run
[model]
type = VVC
g = 2
gating = w1, w2,w3
alpha1 = w1,w2
beta =
[em]
restarts = 3
seed = 11
aitken = true
[quadrature]
tolerance = 1e-9
[search]
criterion = bic
candidates = w1,w2
beta = w3
[output]
trace = t.csv
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.model_type.as_deref(), Some("VVC"));
        assert_eq!(cfg.model.gating.as_ref().unwrap(), &["w1", "w2", "w3"]);
        assert_eq!(cfg.model.beta.as_ref().unwrap().len(), 0);
        assert_eq!(cfg.model.alpha[1], None);
        assert_eq!(cfg.em.restarts, 3);
        assert!(cfg.em.use_aitken);
        assert_eq!(cfg.quadrature.relative_tolerance, 1e-9);
        assert_eq!(cfg.search.criterion, Criterion::Bic);
        assert_eq!(cfg.search.candidates.alpha[2], vec!["w1", "w2"]);
        assert_eq!(cfg.search.candidates.beta, vec!["w3"]);
        assert_eq!(cfg.paths["trace"], "t.csv");
    }

    #[test]
    fn rejects_bad_lines() {
        for text in ["g = 2", "[model]\ng = two", "[model]\nfoo = 1", "[nope]", "[model]\ng = 1\ng = 2", "[em]\ntol = -1"] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn grid_midpoints() {
        let g: GridSpec = "0:8:4,1:2:2".parse().unwrap();
        assert_eq!(g.y1.points().collect::<Vec<_>>(), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(g.y2.points().collect::<Vec<_>>(), vec![1.25, 1.75]);
        assert_eq!(g.cell_area(), 2.0 * 0.5);
        for bad in ["0:8:4", "0:8:0,0:1:1", "2:1:3,0:1:1", "a:1:1,0:1:1", "0:1:1:1,0:1:1", "-1:1:2,0:1:1"] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }
}
