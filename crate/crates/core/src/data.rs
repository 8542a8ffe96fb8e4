//! Tabular input: bivariate responses plus named numeric or categorical
//! covariates, and the design matrices built from them.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RESPONSE_1: &str = "y1";
pub const RESPONSE_2: &str = "y2";

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Levels sorted lexicographically; `codes[i]` indexes into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

/// How a covariate enters a design matrix. Carried by fitted models so
/// new data are encoded exactly as the training data were.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    /// Reference level first, followed by one indicator per other level.
    Categorical(Vec<String>),
}

impl ColumnKind {
    /// Number of design columns this covariate expands to.
    pub fn width(&self) -> usize {
        match self {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical(levels) => levels.len().saturating_sub(1),
        }
    }
}

/// Row-major design matrix with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl Design {
    pub fn intercept(n: usize) -> Self {
        Self {
            n,
            p: 1,
            values: vec![1.0; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            n: rows.len(),
            p,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    /// Linear predictor `coefs · row(i)`.
    #[inline]
    pub fn dot(&self, i: usize, coefs: &[f64]) -> f64 {
        self.row(i).iter().zip(coefs).map(|(a, b)| a * b).sum()
    }
}

/// `n` bivariate observations with named covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    responses: Option<Vec<[f64; 2]>>,
    names: Vec<String>,
    columns: Vec<Column>,
}

fn check_response(y: f64, row: usize, name: &str) -> Result<()> {
    if !(y.is_finite() && y > 0.0) {
        return Err(Error::Data(format!(
            "row {row}: response {name} must be positive and finite, got {y}"
        )));
    }
    Ok(())
}

impl Dataset {
    pub fn new(responses: Vec<[f64; 2]>, names: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        let n = responses.len();
        for (i, y) in responses.iter().enumerate() {
            check_response(y[0], i + 1, RESPONSE_1)?;
            check_response(y[1], i + 1, RESPONSE_2)?;
        }
        Self::assemble(n, Some(responses), names, columns)
    }

    /// A dataset without responses, for prediction.
    pub fn covariates_only(n: usize, names: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        Self::assemble(n, None, names, columns)
    }

    fn assemble(
        n: usize,
        responses: Option<Vec<[f64; 2]>>,
        names: Vec<String>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if names.len() != columns.len() {
            return Err(Error::Dimension {
                expected: names.len(),
                found: columns.len(),
            });
        }
        let mut seen = HashSet::new();
        for (name, col) in names.iter().zip(&columns) {
            if name == RESPONSE_1 || name == RESPONSE_2 || !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column name '{name}'")));
            }
            let len = match col {
                Column::Numeric(v) => v.len(),
                Column::Categorical { codes, levels } => {
                    if codes.iter().any(|&c| c >= levels.len()) {
                        return Err(Error::Data(format!("column '{name}' has an out-of-range level code")));
                    }
                    codes.len()
                }
            };
            if len != n {
                return Err(Error::Dimension { expected: n, found: len });
            }
            if let Column::Numeric(v) = col {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Data(format!("row {}: column '{name}' is not finite", i + 1)));
                }
            }
        }
        Ok(Self {
            n,
            responses,
            names,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_responses(&self) -> bool {
        self.responses.is_some()
    }

    /// The response pairs, or a data error when the file had none.
    pub fn responses(&self) -> Result<&[[f64; 2]]> {
        self.responses
            .as_deref()
            .ok_or_else(|| Error::Data(format!("columns '{RESPONSE_1}' and '{RESPONSE_2}' are required")))
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.names.iter().position(|n| n == name).map(|i| &self.columns[i])
    }

    fn require(&self, name: &str) -> Result<&Column> {
        self.column(name)
            .ok_or_else(|| Error::Data(format!("unknown covariate column '{name}'")))
    }

    /// The encoding this dataset implies for `name`.
    pub fn kind(&self, name: &str) -> Result<ColumnKind> {
        Ok(match self.require(name)? {
            Column::Numeric(_) => ColumnKind::Numeric,
            Column::Categorical { levels, .. } => ColumnKind::Categorical(levels.clone()),
        })
    }

    /// Design matrix `[1, covariates…]` using this dataset's own encodings.
    pub fn design(&self, covariates: &[String]) -> Result<Design> {
        let kinds = covariates
            .iter()
            .map(|c| self.kind(c))
            .collect::<Result<Vec<_>>>()?;
        self.design_with(covariates, &kinds)
    }

    /// Design matrix using externally supplied encodings, e.g. those stored
    /// with a fitted model.
    pub fn design_with(&self, covariates: &[String], kinds: &[ColumnKind]) -> Result<Design> {
        if covariates.len() != kinds.len() {
            return Err(Error::Dimension {
                expected: covariates.len(),
                found: kinds.len(),
            });
        }
        let p = 1 + kinds.iter().map(ColumnKind::width).sum::<usize>();
        let mut values = vec![0.0; self.n * p];
        for i in 0..self.n {
            values[i * p] = 1.0;
        }
        let mut offset = 1;
        for (name, kind) in covariates.iter().zip(kinds) {
            let col = self.require(name)?;
            match (col, kind) {
                (Column::Numeric(v), ColumnKind::Numeric) => {
                    for i in 0..self.n {
                        values[i * p + offset] = v[i];
                    }
                }
                (Column::Categorical { levels, codes }, ColumnKind::Categorical(target)) => {
                    let map = levels
                        .iter()
                        .map(|l| {
                            target.iter().position(|t| t == l).ok_or_else(|| {
                                Error::Data(format!("column '{name}' has level '{l}' unseen during fitting"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for i in 0..self.n {
                        let level = map[codes[i]];
                        if level > 0 {
                            values[i * p + offset + level - 1] = 1.0;
                        }
                    }
                }
                _ => {
                    return Err(Error::Data(format!(
                        "column '{name}' does not have the expected numeric/categorical type"
                    )))
                }
            }
            offset += kind.width();
        }
        Ok(Design { n: self.n, p, values })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_csv_reader(file, true)
    }

    /// Parses CSV text. With `require_responses` false, files without
    /// `y1`/`y2` are accepted and yield a covariate-only dataset.
    pub fn from_csv_reader<R: Read>(reader: R, require_responses: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::parse(1, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            return Err(Error::Data("empty file: header row is missing".into()));
        }
        let mut seen = HashSet::new();
        for h in &header {
            if h.is_empty() {
                return Err(Error::parse(1, "empty column name in header"));
            }
            if !seen.insert(h.as_str()) {
                return Err(Error::parse(1, format!("duplicate column name '{h}'")));
            }
        }
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for (r, record) in rdr.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| Error::parse(line, e))?;
            if record.len() != header.len() {
                return Err(Error::parse(
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            for (j, cell) in record.iter().enumerate() {
                if cell.is_empty() {
                    return Err(Error::parse(line, format!("empty cell in column '{}'", header[j])));
                }
                cells[j].push(cell.to_owned());
            }
        }
        let n = cells.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::Data("file has a header but no data rows".into()));
        }
        let idx1 = header.iter().position(|h| h == RESPONSE_1);
        let idx2 = header.iter().position(|h| h == RESPONSE_2);
        let responses = match (idx1, idx2) {
            (Some(a), Some(b)) => {
                let parse = |j: usize| -> Result<Vec<f64>> {
                    cells[j]
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let v: f64 = s.parse().map_err(|_| {
                                Error::parse(i + 2, format!("column '{}': cannot parse '{s}' as a number", header[j]))
                            })?;
                            check_response(v, i + 2, &header[j]).map_err(|e| match e {
                                Error::Data(m) => Error::parse(i + 2, m),
                                other => other,
                            })?;
                            Ok(v)
                        })
                        .collect()
                };
                let (v1, v2) = (parse(a)?, parse(b)?);
                Some(v1.into_iter().zip(v2).map(|(a, b)| [a, b]).collect::<Vec<_>>())
            }
            (None, None) if !require_responses => None,
            _ => {
                return Err(Error::Data(format!(
                    "columns '{RESPONSE_1}' and '{RESPONSE_2}' are required"
                )))
            }
        };
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (j, name) in header.iter().enumerate() {
            if Some(j) == idx1 || Some(j) == idx2 {
                continue;
            }
            names.push(name.clone());
            columns.push(infer_column(&cells[j], name)?);
        }
        match responses {
            Some(r) => Self::new(r, names, columns),
            None => Self::covariates_only(n, names, columns),
        }
    }

    /// Writes CSV with `y1,y2` first (when present) followed by covariates.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = Vec::new();
        if self.responses.is_some() {
            header.extend([RESPONSE_1, RESPONSE_2]);
        }
        header.extend(self.names.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_io)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.n {
            row.clear();
            if let Some(r) = &self.responses {
                row.push(r[i][0].to_string());
                row.push(r[i][1].to_string());
            }
            for col in &self.columns {
                row.push(match col {
                    Column::Numeric(v) => v[i].to_string(),
                    Column::Categorical { levels, codes } => levels[codes[i]].clone(),
                });
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The rows at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Column::Numeric(idx.iter().map(|&i| v[i]).collect()),
                Column::Categorical { levels, codes } => Column::Categorical {
                    levels: levels.clone(),
                    codes: idx.iter().map(|&i| codes[i]).collect(),
                },
            })
            .collect();
        let responses = self.responses.as_ref().map(|r| idx.iter().map(|&i| r[i]).collect());
        Self::assemble(idx.len(), responses, self.names.clone(), columns)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn infer_column(cells: &[String], name: &str) -> Result<Column> {
    let parsed: Option<Vec<f64>> = cells.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(values) = parsed {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(i + 2, format!("column '{name}': non-finite value")));
        }
        return Ok(Column::Numeric(values));
    }
    let levels: Vec<String> = cells.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let codes = cells
        .iter()
        .map(|s| levels.binary_search(s).expect("level collected above"))
        .collect();
    Ok(Column::Categorical { levels, codes })
}
