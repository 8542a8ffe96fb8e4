//! Text serialization of fitted models.
//!
//! The document is line based: `key = value` pairs grouped under
//! `[section]` headers, floats in shortest round-trip form, and a final
//! `checksum = sha256:<hex>` line covering every preceding byte. Names are
//! percent-encoded so they never contain separators.

use std::io::Write;
use std::path::Path;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use sha2::{Digest, Sha256};

use crate::data::ColumnKind;
use crate::error::{Error, Result};
use crate::moe::{param_count, ExpertParams, FittedModel, GatingParams, ModelSpec, NetworkDims, NetworkKind, NetworkSpec};

pub const FORMAT_NAME: &str = "bgmoe-model";
pub const FORMAT_VERSION: u32 = 1;

const RESERVED: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'%')
    .add(b',')
    .add(b'=')
    .add(b'[')
    .add(b']')
    .add(b'#');

const NETWORKS: [&str; 5] = ["gating", "alpha1", "alpha2", "alpha3", "beta"];

fn encode(s: &str) -> String {
    utf8_percent_encode(s, RESERVED).to_string()
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn names(v: &[String]) -> String {
    v.iter().map(|s| encode(s)).collect::<Vec<_>>().join(",")
}

/// Renders a model as a checksummed text document.
pub fn to_text(model: &FittedModel) -> String {
    let spec = &model.spec;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("format = {FORMAT_NAME}"));
    line(format!("version = {FORMAT_VERSION}"));
    line("[spec]".into());
    line(format!("g = {}", spec.g));
    line(format!(
        "kinds = {}",
        spec.networks().iter().map(|n| n.kind.letter().to_string()).collect::<Vec<_>>().join(",")
    ));
    for (name, net) in NETWORKS.iter().zip(spec.networks()) {
        line(format!("{name} = {}", names(&net.covariates)));
    }
    line("[columns]".into());
    for (name, kind) in &model.schema {
        match kind {
            ColumnKind::Numeric => line(format!("{} = numeric", encode(name))),
            ColumnKind::Categorical(levels) => {
                line(format!("{} = categorical {}", encode(name), names(levels)))
            }
        }
    }
    line("[fit]".into());
    line(format!("loglik = {:?}", model.loglik));
    line(format!("n_params = {}", model.n_params));
    line(format!("n_obs = {}", model.n_obs));
    line(format!("converged = {}", model.converged));
    line(format!("iterations = {}", model.iterations));
    line("[gating]".into());
    match &model.gating {
        GatingParams::Equal => line("kind = equal".into()),
        GatingParams::Weights(w) => {
            line("kind = weights".into());
            line(format!("values = {}", floats(w)));
        }
        GatingParams::Regression(rows) => {
            line("kind = regression".into());
            for r in rows {
                line(format!("row = {}", floats(r)));
            }
        }
    }
    let experts = [&model.alpha[0], &model.alpha[1], &model.alpha[2], &model.beta];
    for (name, e) in NETWORKS[1..].iter().zip(experts) {
        line(format!("[{name}]"));
        match e {
            ExpertParams::Constant(v) => {
                line("kind = constant".into());
                line(format!("values = {}", floats(v)));
            }
            ExpertParams::Regression(rows) => {
                line("kind = regression".into());
                for r in rows {
                    line(format!("row = {}", floats(r)));
                }
            }
            ExpertParams::Shared(v) => {
                line("kind = shared".into());
                line(format!("values = {}", floats(v)));
            }
            ExpertParams::Global(v) => {
                line("kind = global".into());
                line(format!("values = {v:?}"));
            }
        }
    }
    let digest = Sha256::digest(out.as_bytes());
    out.push_str(&format!("checksum = sha256:{}\n", hex(&digest)));
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

struct Section<'a> {
    name: &'a str,
    line: usize,
    entries: Vec<Entry<'a>>,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Result<&Entry<'a>> {
        let mut found = self.entries.iter().filter(|e| e.key == key);
        let e = found
            .next()
            .ok_or_else(|| Error::parse(self.line, format!("section [{}] lacks '{key}'", self.name)))?;
        if let Some(dup) = found.next() {
            return Err(Error::parse(dup.line, format!("duplicate key '{key}'")));
        }
        Ok(e)
    }

    fn all<'s>(&'s self, key: &'s str) -> impl Iterator<Item = &'s Entry<'a>> + 's {
        self.entries.iter().filter(move |e| e.key == key)
    }

    fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key)) {
            Some(e) => Err(Error::parse(e.line, format!("unexpected key '{}' in [{}]", e.key, self.name))),
            None => Ok(()),
        }
    }
}

fn decode(s: &str, line: usize) -> Result<String> {
    percent_decode_str(s)
        .decode_utf8()
        .map(|c| c.into_owned())
        .map_err(|_| Error::parse(line, "name is not valid UTF-8 after decoding"))
}

fn parse_names(e: &Entry) -> Result<Vec<String>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value.split(',').map(|s| decode(s, e.line)).collect()
}

fn parse_floats(e: &Entry) -> Result<Vec<f64>> {
    if e.value.is_empty() {
        return Ok(Vec::new());
    }
    e.value
        .split(',')
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(e.line, format!("'{s}' is not a number")))
        })
        .collect()
}

fn parse_count(e: &Entry) -> Result<usize> {
    e.value
        .parse()
        .map_err(|_| Error::parse(e.line, format!("'{}' is not a count", e.value)))
}

/// Splits off and verifies the trailing checksum line; returns the body.
fn verify_checksum(text: &str) -> Result<&str> {
    let trimmed = text.strip_suffix('\n').ok_or(Error::Checksum)?;
    let start = trimmed.rfind('\n').map_or(0, |i| i + 1);
    let (body, last) = text.split_at(start);
    let stated = last
        .trim_end()
        .strip_prefix("checksum = sha256:")
        .ok_or(Error::Checksum)?;
    if hex(&Sha256::digest(body.as_bytes())) != stated {
        return Err(Error::Checksum);
    }
    Ok(body)
}

fn sections(body: &str) -> Result<(Vec<Entry<'_>>, Vec<Section<'_>>)> {
    let mut header = Vec::new();
    let mut out: Vec<Section> = Vec::new();
    for (idx, raw) in body.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(name) = raw.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(line, "unterminated section header"))?;
            if out.iter().any(|s| s.name == name) {
                return Err(Error::parse(line, format!("duplicate section [{name}]")));
            }
            out.push(Section {
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = raw
            .split_once(" = ")
            .or_else(|| raw.strip_suffix(" =").map(|k| (k, "")))
            .ok_or_else(|| Error::parse(line, "expected 'key = value'"))?;
        let entry = Entry { line, key, value };
        match out.last_mut() {
            Some(s) => s.entries.push(entry),
            None => header.push(entry),
        }
    }
    Ok((header, out))
}

fn section<'s, 'a>(all: &'s [Section<'a>], name: &str) -> Result<&'s Section<'a>> {
    all.iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::parse(0, format!("missing section [{name}]")))
}

fn parse_kind(s: &str, line: usize) -> Result<NetworkKind> {
    let mut chars = s.chars();
    match (chars.next().and_then(NetworkKind::from_letter), chars.next()) {
        (Some(k), None) => Ok(k),
        _ => Err(Error::parse(line, format!("'{s}' is not a network kind"))),
    }
}

fn check_row(row: &[f64], width: usize, line: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::parse(line, format!("expected {width} coefficients, found {}", row.len())));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse(line, "coefficients must be finite"));
    }
    Ok(())
}

fn parse_expert(s: &Section, kind: NetworkKind, g: usize, width: usize) -> Result<ExpertParams> {
    s.expect_keys(&["kind", "values", "row"])?;
    let stated = s.get("kind")?;
    let expected = match kind {
        NetworkKind::C => "constant",
        NetworkKind::V => "regression",
        NetworkKind::E => "shared",
        NetworkKind::I => "global",
    };
    if stated.value != expected {
        return Err(Error::parse(
            stated.line,
            format!("[{}] must be '{expected}' for a {kind} network", s.name),
        ));
    }
    let positive = |v: &[f64], line: usize| {
        if v.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::parse(line, "values must be positive and finite"))
        }
    };
    match kind {
        NetworkKind::V => {
            let rows = s
                .all("row")
                .map(|e| {
                    let r = parse_floats(e)?;
                    check_row(&r, width, e.line)?;
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            if rows.len() != g {
                return Err(Error::parse(s.line, format!("[{}] needs {g} rows, found {}", s.name, rows.len())));
            }
            Ok(ExpertParams::Regression(rows))
        }
        NetworkKind::C => {
            let e = s.get("values")?;
            let v = parse_floats(e)?;
            if v.len() != g {
                return Err(Error::parse(e.line, format!("expected {g} values, found {}", v.len())));
            }
            positive(&v, e.line)?;
            Ok(ExpertParams::Constant(v))
        }
        NetworkKind::E => {
            let e = s.get("values")?;
            let v = parse_floats(e)?;
            check_row(&v, width, e.line)?;
            Ok(ExpertParams::Shared(v))
        }
        NetworkKind::I => {
            let e = s.get("values")?;
            let v = parse_floats(e)?;
            if v.len() != 1 {
                return Err(Error::parse(e.line, "expected one value"));
            }
            positive(&v, e.line)?;
            Ok(ExpertParams::Global(v[0]))
        }
    }
}

fn parse_gating(s: &Section, kind: NetworkKind, g: usize, width: usize) -> Result<GatingParams> {
    s.expect_keys(&["kind", "values", "row"])?;
    let stated = s.get("kind")?;
    let expected = match kind {
        NetworkKind::C => "weights",
        NetworkKind::V => "regression",
        _ => "equal",
    };
    if stated.value != expected {
        return Err(Error::parse(
            stated.line,
            format!("[gating] must be '{expected}' for a {kind} network"),
        ));
    }
    match kind {
        NetworkKind::V => {
            let rows = s
                .all("row")
                .map(|e| {
                    let r = parse_floats(e)?;
                    check_row(&r, width, e.line)?;
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            if rows.len() != g - 1 {
                return Err(Error::parse(s.line, format!("[gating] needs {} rows, found {}", g - 1, rows.len())));
            }
            Ok(GatingParams::Regression(rows))
        }
        NetworkKind::C => {
            let e = s.get("values")?;
            let w = parse_floats(e)?;
            if w.len() != g {
                return Err(Error::parse(e.line, format!("expected {g} weights, found {}", w.len())));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::parse(e.line, "weights must be non-negative and sum to one"));
            }
            Ok(GatingParams::Weights(w))
        }
        _ => Ok(GatingParams::Equal),
    }
}

/// Parses a document produced by [`to_text`].
pub fn from_text(text: &str) -> Result<FittedModel> {
    let body = verify_checksum(text)?;
    let (header, all) = sections(body)?;
    let hs = Section {
        name: "header",
        line: 1,
        entries: header,
    };
    hs.expect_keys(&["format", "version"])?;
    let fmt = hs.get("format")?;
    if fmt.value != FORMAT_NAME {
        return Err(Error::parse(fmt.line, format!("not a {FORMAT_NAME} document")));
    }
    let ver = hs.get("version")?;
    if ver.value != FORMAT_VERSION.to_string() {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: ver.value.to_string(),
        });
    }
    for s in &all {
        if !["spec", "columns", "fit"].contains(&s.name) && !NETWORKS.contains(&s.name) {
            return Err(Error::parse(s.line, format!("unknown section [{}]", s.name)));
        }
    }

    let s = section(&all, "spec")?;
    let mut keys = vec!["g", "kinds"];
    keys.extend(NETWORKS);
    s.expect_keys(&keys)?;
    let g_entry = s.get("g")?;
    let g = parse_count(g_entry)?;
    if g == 0 {
        return Err(Error::parse(g_entry.line, "component count must be at least 1"));
    }
    let kinds_entry = s.get("kinds")?;
    let kinds = kinds_entry
        .value
        .split(',')
        .map(|k| parse_kind(k, kinds_entry.line))
        .collect::<Result<Vec<_>>>()?;
    if kinds.len() != 5 {
        return Err(Error::parse(kinds_entry.line, "expected five network kinds"));
    }
    let mut nets = Vec::with_capacity(5);
    for (name, kind) in NETWORKS.iter().zip(&kinds) {
        nets.push(NetworkSpec::new(*kind, parse_names(s.get(name)?)?));
    }
    let mut nets = nets.into_iter();
    let mut next = || nets.next().expect("five networks");
    let spec = ModelSpec {
        g,
        gating: next(),
        alpha: [next(), next(), next()],
        beta: next(),
    };
    spec.validate().map_err(|e| Error::parse(s.line, e))?;

    let cs = section(&all, "columns")?;
    let mut schema = Vec::new();
    for e in &cs.entries {
        let name = decode(e.key, e.line)?;
        let kind = if e.value == "numeric" {
            ColumnKind::Numeric
        } else if let Some(levels) = e.value.strip_prefix("categorical ") {
            let levels = levels
                .split(',')
                .map(|l| decode(l, e.line))
                .collect::<Result<Vec<_>>>()?;
            if levels.len() < 2 {
                return Err(Error::parse(e.line, "a categorical column needs at least two levels"));
            }
            ColumnKind::Categorical(levels)
        } else {
            return Err(Error::parse(e.line, format!("unknown column kind '{}'", e.value)));
        };
        schema.push((name, kind));
    }
    let listed: Vec<&String> = schema.iter().map(|(n, _)| n).collect();
    let expected = spec.covariates();
    if listed.len() != expected.len() || listed.iter().zip(&expected).any(|(a, b)| *a != b) {
        return Err(Error::parse(cs.line, "column list does not match the covariates of the spec"));
    }
    let width = |net: &NetworkSpec| {
        1 + net
            .covariates
            .iter()
            .map(|c| schema.iter().find(|(n, _)| n == c).map_or(0, |(_, k)| k.width()))
            .sum::<usize>()
    };
    let dims = NetworkDims {
        gating: width(&spec.gating),
        alpha: [width(&spec.alpha[0]), width(&spec.alpha[1]), width(&spec.alpha[2])],
        beta: width(&spec.beta),
    };

    let fs = section(&all, "fit")?;
    fs.expect_keys(&["loglik", "n_params", "n_obs", "converged", "iterations"])?;
    let ll = fs.get("loglik")?;
    let loglik: f64 = ll
        .value
        .parse()
        .map_err(|_| Error::parse(ll.line, format!("'{}' is not a number", ll.value)))?;
    let np = fs.get("n_params")?;
    let n_params = parse_count(np)?;
    if n_params != param_count(&spec, &dims) {
        return Err(Error::parse(np.line, "parameter count does not match the spec"));
    }
    let n_obs = parse_count(fs.get("n_obs")?)?;
    let conv = fs.get("converged")?;
    let converged = match conv.value {
        "true" => true,
        "false" => false,
        v => return Err(Error::parse(conv.line, format!("'{v}' is not a boolean"))),
    };
    let iterations = parse_count(fs.get("iterations")?)?;

    let gating = parse_gating(section(&all, "gating")?, spec.gating.kind, g, dims.gating)?;
    let alpha = [0, 1, 2].map(|k| parse_expert(section(&all, NETWORKS[k + 1])?, spec.alpha[k].kind, g, dims.alpha[k]));
    let [a1, a2, a3] = alpha;
    let alpha = [a1?, a2?, a3?];
    let beta = parse_expert(section(&all, "beta")?, spec.beta.kind, g, dims.beta)?;

    Ok(FittedModel {
        spec,
        schema,
        gating,
        alpha,
        beta,
        loglik,
        n_params,
        n_obs,
        converged,
        iterations,
        responsibilities: None,
    })
}

pub fn write_model<W: Write>(model: &FittedModel, mut w: W) -> Result<()> {
    w.write_all(to_text(model).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn save_model(path: impl AsRef<Path>, model: &FittedModel) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Checksum)?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> FittedModel {
        let spec = ModelSpec::build(
            "VVE",
            2,
            vec!["w 1".into()],
            [vec!["region".into()], vec![], vec!["w 1".into()]],
            vec!["w 1".into()],
        )
        .unwrap();
        FittedModel {
            spec,
            schema: vec![
                ("w 1".into(), ColumnKind::Numeric),
                ("region".into(), ColumnKind::Categorical(vec!["a,b".into(), "c".into(), "d=e".into()])),
            ],
            gating: GatingParams::Regression(vec![vec![0.1, -0.2]]),
            alpha: [
                ExpertParams::Regression(vec![vec![0.3, 1.0 / 3.0, -2.0], vec![1e-300, 0.0, 5.5]]),
                ExpertParams::Regression(vec![vec![0.7], vec![-0.7]]),
                ExpertParams::Regression(vec![vec![0.1, 0.2], vec![0.3, 0.4]]),
            ],
            beta: ExpertParams::Shared(vec![std::f64::consts::PI, -1.0]),
            loglik: -1234.5678901234567,
            n_params: 2 + 6 + 2 + 4 + 2,
            n_obs: 500,
            converged: true,
            iterations: 42,
            responsibilities: None,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let text = to_text(&m);
        assert_eq!(from_text(&text).unwrap(), m);
    }

    #[test]
    fn constant_kinds_round_trip() {
        let m = FittedModel {
            spec: ModelSpec::constant(3),
            schema: vec![],
            gating: GatingParams::Weights(vec![0.25, 0.5, 0.25]),
            alpha: [
                ExpertParams::Constant(vec![1.0, 2.0, 3.0]),
                ExpertParams::Constant(vec![4.0, 5.0, 6.0]),
                ExpertParams::Constant(vec![0.1, 0.2, 0.3]),
            ],
            beta: ExpertParams::Constant(vec![1.5, 2.5, 3.5]),
            loglik: f64::NAN,
            n_params: 2 + 9 + 3,
            n_obs: 10,
            converged: false,
            iterations: 0,
            responsibilities: None,
        };
        let back = from_text(&to_text(&m)).unwrap();
        assert!(back.loglik.is_nan());
        assert_eq!(back.alpha, m.alpha);
        assert_eq!(back.gating, m.gating);
    }

    #[test]
    fn truncation_and_tampering_fail_checksum() {
        let text = to_text(&model());
        for cut in [0, 10, text.len() / 2, text.len() - 2] {
            assert!(matches!(from_text(&text[..cut]), Err(Error::Checksum)), "cut {cut}");
        }
        let tampered = text.replacen("iterations = 42", "iterations = 43", 1);
        assert!(matches!(from_text(&tampered), Err(Error::Checksum)));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = to_text(&model());
        let body = verify_checksum(&text).unwrap().replacen("version = 1", "version = 2", 1);
        let doc = format!("{body}checksum = sha256:{}\n", hex(&Sha256::digest(body.as_bytes())));
        assert!(matches!(from_text(&doc), Err(Error::Version { expected: 1, .. })));
    }

    #[test]
    fn shape_mismatch_is_a_parse_error() {
        let text = to_text(&model());
        let body = verify_checksum(&text).unwrap().replacen("row = 0.7", "row = 0.7,1.0", 1);
        let doc = format!("{body}checksum = sha256:{}\n", hex(&Sha256::digest(body.as_bytes())));
        assert!(matches!(from_text(&doc), Err(Error::Parse { .. })));
    }
}
