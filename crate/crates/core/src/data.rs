//! Tabular data, model specifications and per-group design matrices.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Strings treated as a missing value when reading CSV input.
const MISSING_TOKENS: &[&str] = &["", "NA", "NaN", "."];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Level codes index into `levels`, which are kept in sorted order.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    /// Builds a categorical column with levels in sort order.
    pub fn categorical<S: AsRef<str>>(values: &[S]) -> Self {
        let mut levels: Vec<String> = values.iter().map(|v| v.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = values
            .iter()
            .map(|v| levels.binary_search_by(|l| l.as_str().cmp(v.as_ref())).unwrap())
            .collect();
        Column::Categorical { levels, codes }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::Numeric(_) => ColumnType::Numeric,
            Column::Categorical { .. } => ColumnType::Categorical,
        }
    }

    /// Value of row `i` rendered as a label.
    pub fn label(&self, i: usize) -> String {
        match self {
            Column::Numeric(v) => v[i].to_string(),
            Column::Categorical { levels, codes } => levels[codes[i]].clone(),
        }
    }
}

/// Column typing used when reading a CSV file. Every listed column is required.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub columns: Vec<(String, ColumnType)>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, ty: ColumnType) -> Self {
        self.add(name, ty);
        self
    }

    pub fn add(&mut self, name: impl Into<String>, ty: ColumnType) {
        let name = name.into();
        if let Some(entry) = self.columns.iter_mut().find(|(n, _)| *n == name) {
            entry.1 = ty;
        } else {
            self.columns.push((name, ty));
        }
    }

    pub fn get(&self, name: &str) -> Option<ColumnType> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Column>,
    n_rows: usize,
    /// Rows removed during ingestion because a required field was missing.
    pub dropped: usize,
}

impl Dataset {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self> {
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        for (name, col) in &columns {
            if col.len() != n_rows {
                return Err(Error::Dimension(format!(
                    "column `{name}` has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            if let Column::Categorical { levels, codes } = col {
                if levels.is_empty() && n_rows > 0 {
                    return Err(Error::InvalidParams(format!("column `{name}` has no levels")));
                }
                if codes.iter().any(|&c| c >= levels.len()) {
                    return Err(Error::InvalidParams(format!(
                        "column `{name}` has a code outside its levels"
                    )));
                }
            }
            if let Column::Numeric(v) = col {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "column `{name}` has non-finite values"
                    )));
                }
            }
        }
        if n_rows == 0 {
            return Err(Error::EmptyDataset { dropped: 0 });
        }
        let (names, columns) = columns.into_iter().unzip();
        Ok(Self {
            names,
            columns,
            n_rows,
            dropped: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            _ => Err(Error::WrongColumnType(name.to_string())),
        }
    }

    /// Returns a copy with the named numeric column replaced.
    pub fn with_numeric(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        if values.len() != self.n_rows {
            return Err(Error::Dimension(format!(
                "replacement for `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        let mut out = self.clone();
        out.columns[idx] = Column::Numeric(values);
        Ok(out)
    }

    /// Writes the dataset as CSV with a header row.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for i in 0..self.n_rows {
            let row: Vec<String> = self.columns.iter().map(|c| c.label(i)).collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Reads a CSV file, keeping only the schema's columns.
///
/// Rows with a missing value in any schema column are dropped; the count is
/// stored in [`Dataset::dropped`].
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|(name, _)| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
    let mut text: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    let mut dropped = 0;
    let mut kept = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let fields: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
        if fields.iter().any(|f| MISSING_TOKENS.contains(f)) {
            dropped += 1;
            continue;
        }
        for (k, ((name, ty), field)) in schema.columns.iter().zip(&fields).enumerate() {
            match ty {
                ColumnType::Numeric => {
                    let v: f64 = field.parse().map_err(|_| Error::TypeMismatch {
                        column: name.clone(),
                        row: row + 1,
                        value: field.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::TypeMismatch {
                            column: name.clone(),
                            row: row + 1,
                            value: field.to_string(),
                        });
                    }
                    numeric[k].push(v);
                }
                ColumnType::Categorical => text[k].push(field.to_string()),
            }
        }
        kept += 1;
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    if kept == 0 {
        return Err(Error::EmptyDataset { dropped });
    }
    let columns = schema
        .columns
        .iter()
        .enumerate()
        .map(|(k, (name, ty))| {
            let col = match ty {
                ColumnType::Numeric => Column::Numeric(std::mem::take(&mut numeric[k])),
                ColumnType::Categorical => Column::categorical(&text[k]),
            };
            (name.clone(), col)
        })
        .collect();
    let mut ds = Dataset::new(columns)?;
    ds.dropped = dropped;
    Ok(ds)
}

/// A fixed-effect term. Serializes as its formula text (`1`, `x`,
/// `poly(x, 2)`, `factor(f)`), the same form the TOML config uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FixedTerm {
    Intercept,
    Numeric(String),
    /// Centered raw powers 1..=degree of a numeric column.
    Poly { column: String, degree: usize },
    /// Reference-level indicator coding of a categorical column.
    Factor(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RandomTerm {
    Intercept,
    Slope(String),
}

impl fmt::Display for FixedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedTerm::Intercept => write!(f, "1"),
            FixedTerm::Numeric(c) => write!(f, "{c}"),
            FixedTerm::Poly { column, degree } => write!(f, "poly({column}, {degree})"),
            FixedTerm::Factor(c) => write!(f, "factor({c})"),
        }
    }
}

impl fmt::Display for RandomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomTerm::Intercept => write!(f, "1"),
            RandomTerm::Slope(c) => write!(f, "{c}"),
        }
    }
}

fn parse_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?
        .trim_start()
        .strip_prefix('(')?
        .strip_suffix(')')
        .map(str::trim)
}

impl std::str::FromStr for FixedTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" || s.eq_ignore_ascii_case("intercept") {
            return Ok(FixedTerm::Intercept);
        }
        if let Some(inner) = parse_call(s, "poly") {
            let (column, degree) = inner
                .split_once(',')
                .ok_or_else(|| Error::InvalidSpec(format!("`{s}`: expected poly(column, degree)")))?;
            let degree: usize = degree
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSpec(format!("`{s}`: bad polynomial degree")))?;
            if degree == 0 {
                return Err(Error::InvalidSpec(format!("`{s}`: degree must be at least 1")));
            }
            return Ok(FixedTerm::Poly {
                column: column.trim().to_string(),
                degree,
            });
        }
        if let Some(inner) = parse_call(s, "factor") {
            return Ok(FixedTerm::Factor(inner.to_string()));
        }
        if s.is_empty() || s.contains(['(', ')', ',']) {
            return Err(Error::InvalidSpec(format!("unrecognized term `{s}`")));
        }
        Ok(FixedTerm::Numeric(s.to_string()))
    }
}

impl std::str::FromStr for RandomTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" || s.eq_ignore_ascii_case("intercept") {
            Ok(RandomTerm::Intercept)
        } else if s.is_empty() || s.contains(['(', ')', ',']) {
            Err(Error::InvalidSpec(format!("unrecognized random term `{s}`")))
        } else {
            Ok(RandomTerm::Slope(s.to_string()))
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }

        impl From<$t> for String {
            fn from(t: $t) -> String {
                t.to_string()
            }
        }
    };
}

string_serde!(FixedTerm);
string_serde!(RandomTerm);

/// Two-level model: response ~ fixed + (random | group).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub fixed: Vec<FixedTerm>,
    pub random: Vec<RandomTerm>,
    pub group: String,
}

/// Key-value form of a [`ModelSpec`], as read from a TOML config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecConfig {
    response: String,
    fixed: Vec<String>,
    random: Vec<String>,
    group: String,
}

impl ModelSpec {
    pub fn new(
        response: impl Into<String>,
        fixed: Vec<FixedTerm>,
        random: Vec<RandomTerm>,
        group: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self {
            response: response.into(),
            fixed,
            random,
            group: group.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.fixed.is_empty() {
            return Err(Error::InvalidSpec("at least one fixed term is required".into()));
        }
        if self.random.is_empty() {
            return Err(Error::InvalidSpec("at least one random term is required".into()));
        }
        for (i, t) in self.fixed.iter().enumerate() {
            if self.fixed[..i].contains(t) {
                return Err(Error::InvalidSpec(format!("duplicate fixed term `{t}`")));
            }
        }
        for (i, t) in self.random.iter().enumerate() {
            if self.random[..i].contains(t) {
                return Err(Error::InvalidSpec(format!("duplicate random term `{t}`")));
            }
        }
        Ok(())
    }

    /// Parses the TOML config form (`response`, `fixed`, `random`, `group`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SpecConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fixed = cfg.fixed.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        let random = cfg.random.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        Self::new(cfg.response, fixed, random, cfg.group)
    }

    pub fn to_toml(&self) -> String {
        let cfg = SpecConfig {
            response: self.response.clone(),
            fixed: self.fixed.iter().map(ToString::to_string).collect(),
            random: self.random.iter().map(ToString::to_string).collect(),
            group: self.group.clone(),
        };
        toml::to_string(&cfg).expect("spec config serializes")
    }

    /// Column types implied by the terms; usable directly with [`load_csv`].
    pub fn schema(&self) -> Schema {
        let mut schema = Schema::new().with(&self.response, ColumnType::Numeric);
        for t in &self.fixed {
            match t {
                FixedTerm::Intercept => {}
                FixedTerm::Numeric(c) | FixedTerm::Poly { column: c, .. } => {
                    schema.add(c, ColumnType::Numeric)
                }
                FixedTerm::Factor(c) => schema.add(c, ColumnType::Categorical),
            }
        }
        for t in &self.random {
            if let RandomTerm::Slope(c) = t {
                schema.add(c, ColumnType::Numeric);
            }
        }
        schema.add(&self.group, ColumnType::Categorical);
        schema
    }

    /// Spec with fixed term `index` removed; the random structure is kept.
    pub fn drop_fixed_term(&self, index: usize) -> Result<Self> {
        if index >= self.fixed.len() {
            return Err(Error::TermIndex {
                index,
                len: self.fixed.len(),
            });
        }
        if self.fixed.len() == 1 {
            return Err(Error::InvalidSpec("cannot drop the only fixed term".into()));
        }
        let mut out = self.clone();
        out.fixed.remove(index);
        Ok(out)
    }

    /// Spec with random term `index` removed.
    pub fn drop_random_term(&self, index: usize) -> Result<Self> {
        if index >= self.random.len() {
            return Err(Error::TermIndex {
                index,
                len: self.random.len(),
            });
        }
        if self.random.len() == 1 {
            return Err(Error::InvalidSpec("cannot drop the only random term".into()));
        }
        let mut out = self.clone();
        out.random.remove(index);
        Ok(out)
    }
}

/// Data and design matrices of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    /// Dataset row indices, in dataset order.
    pub rows: Vec<usize>,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Numerical rank of `x`.
    pub x_rank: usize,
}

impl Group {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    pub groups: Vec<Group>,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    /// Columns of X contributed by each fixed term, in term order.
    pub fixed_term_columns: Vec<Range<usize>>,
    pub warnings: Vec<String>,
}

impl GroupedDesign {
    pub fn g(&self) -> usize {
        self.groups.len()
    }

    pub fn p(&self) -> usize {
        self.fixed_names.len()
    }

    pub fn q(&self) -> usize {
        self.random_names.len()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(Group::n).sum()
    }

    /// Builds a design from explicit per-group blocks.
    pub fn from_groups(
        groups: Vec<Group>,
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        let p = fixed_names.len();
        let q = random_names.len();
        for grp in &groups {
            let n = grp.y.len();
            if n == 0 {
                return Err(Error::EmptyGroup(grp.label.clone()));
            }
            if grp.x.shape() != (n, p) || grp.z.shape() != (n, q) {
                return Err(Error::Dimension(format!(
                    "group `{}`: X is {:?}, Z is {:?}, expected ({n}, {p}) and ({n}, {q})",
                    grp.label,
                    grp.x.shape(),
                    grp.z.shape()
                )));
            }
        }
        let fixed_term_columns = (0..p).map(|j| j..j + 1).collect();
        let mut design = Self {
            groups,
            fixed_names,
            random_names,
            fixed_term_columns,
            warnings: Vec::new(),
        };
        for grp in &mut design.groups {
            grp.x_rank = linalg::rank(&grp.x);
        }
        design.check_global_rank();
        Ok(design)
    }

    fn check_global_rank(&mut self) {
        let x = self.stacked_x();
        let r = linalg::rank(&x);
        if r < self.p() {
            let msg = format!("global fixed-effect design has rank {r} < {} columns", self.p());
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
    }

    pub fn stacked_x(&self) -> DMatrix<f64> {
        stack_rows(self.groups.iter().map(|g| &g.x), self.p())
    }

    pub fn stacked_y(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_total(),
            self.groups.iter().flat_map(|g| g.y.iter().copied()),
        )
    }

    /// Same design with responses replaced group by group.
    pub fn with_response(&self, y: Vec<DVector<f64>>) -> Result<Self> {
        if y.len() != self.g() {
            return Err(Error::Dimension(format!(
                "{} response blocks for {} groups",
                y.len(),
                self.g()
            )));
        }
        let mut out = self.clone();
        for (grp, yi) in out.groups.iter_mut().zip(y) {
            if yi.len() != grp.n() {
                return Err(Error::Dimension(format!(
                    "group `{}`: response has {} rows, expected {}",
                    grp.label,
                    yi.len(),
                    grp.n()
                )));
            }
            grp.y = yi;
        }
        Ok(out)
    }

    /// Same design with every response scaled by `k`.
    pub fn scaled_response(&self, k: f64) -> Self {
        let mut out = self.clone();
        for grp in &mut out.groups {
            grp.y *= k;
        }
        out
    }

    /// Design with the columns of fixed term `term` removed from every X_i.
    pub fn without_fixed_term(&self, term: usize) -> Result<Self> {
        let range = self
            .fixed_term_columns
            .get(term)
            .cloned()
            .ok_or(Error::TermIndex {
                index: term,
                len: self.fixed_term_columns.len(),
            })?;
        if range.len() == self.p() {
            return Err(Error::InvalidSpec("cannot drop the only fixed term".into()));
        }
        let keep: Vec<usize> = (0..self.p()).filter(|j| !range.contains(j)).collect();
        let mut out = self.clone();
        for grp in &mut out.groups {
            grp.x = grp.x.select_columns(&keep);
            grp.x_rank = linalg::rank(&grp.x);
        }
        out.fixed_names = keep.iter().map(|&j| self.fixed_names[j].clone()).collect();
        let width = range.len();
        out.fixed_term_columns = self
            .fixed_term_columns
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != term)
            .map(|(_, r)| {
                if r.start >= range.end {
                    r.start - width..r.end - width
                } else {
                    r.clone()
                }
            })
            .collect();
        out.warnings.clear();
        out.check_global_rank();
        Ok(out)
    }

    /// Design with random column `j` removed from every Z_i.
    pub fn without_random_term(&self, j: usize) -> Result<Self> {
        if j >= self.q() {
            return Err(Error::TermIndex {
                index: j,
                len: self.q(),
            });
        }
        if self.q() == 1 {
            return Err(Error::InvalidSpec("cannot drop the only random term".into()));
        }
        let mut out = self.clone();
        for grp in &mut out.groups {
            grp.z = grp.z.clone().remove_column(j);
        }
        out.random_names.remove(j);
        Ok(out)
    }
}

fn stack_rows<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>>, ncols: usize) -> DMatrix<f64> {
    let blocks: Vec<&DMatrix<f64>> = blocks.collect();
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, ncols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Dataset-wide columns generated by one fixed term.
fn fixed_term_columns(term: &FixedTerm, data: &Dataset) -> Result<Vec<(String, Vec<f64>)>> {
    let n = data.n_rows();
    Ok(match term {
        FixedTerm::Intercept => vec![("(Intercept)".into(), vec![1.0; n])],
        FixedTerm::Numeric(c) => vec![(c.clone(), data.numeric(c)?.to_vec())],
        FixedTerm::Poly { column, degree } => {
            let x = data.numeric(column)?;
            let mean = x.iter().sum::<f64>() / n as f64;
            (1..=*degree)
                .map(|k| {
                    let name = format!("poly({column})^{k}");
                    let values = x.iter().map(|v| (v - mean).powi(k as i32)).collect();
                    (name, values)
                })
                .collect()
        }
        FixedTerm::Factor(c) => match data.column(c)? {
            Column::Categorical { levels, codes } => levels
                .iter()
                .enumerate()
                .skip(1)
                .map(|(l, level)| {
                    let values = codes.iter().map(|&k| if k == l { 1.0 } else { 0.0 }).collect();
                    (format!("{c}[{level}]"), values)
                })
                .collect(),
            Column::Numeric(_) => return Err(Error::WrongColumnType(c.clone())),
        },
    })
}

fn random_term_column(term: &RandomTerm, data: &Dataset) -> Result<(String, Vec<f64>)> {
    Ok(match term {
        RandomTerm::Intercept => ("(Intercept)".into(), vec![1.0; data.n_rows()]),
        RandomTerm::Slope(c) => (c.clone(), data.numeric(c)?.to_vec()),
    })
}

/// Assembles per-group y_i, X_i and Z_i in term order.
///
/// Groups follow the sorted level order of the grouping factor. A
/// rank-deficient global X is recorded in `warnings` but is not an error.
pub fn build_design(spec: &ModelSpec, data: &Dataset) -> Result<GroupedDesign> {
    spec.validate()?;
    let y = data.numeric(&spec.response)?;
    let (levels, codes) = match data.column(&spec.group)? {
        Column::Categorical { levels, codes } => (levels, codes),
        Column::Numeric(_) => return Err(Error::WrongColumnType(spec.group.clone())),
    };

    let mut fixed_cols = Vec::new();
    let mut term_ranges = Vec::new();
    for term in &spec.fixed {
        let cols = fixed_term_columns(term, data)?;
        if cols.is_empty() {
            return Err(Error::InvalidSpec(format!("term `{term}` generates no columns")));
        }
        let start = fixed_cols.len();
        fixed_cols.extend(cols);
        term_ranges.push(start..fixed_cols.len());
    }
    let random_cols: Vec<(String, Vec<f64>)> = spec
        .random
        .iter()
        .map(|t| random_term_column(t, data))
        .collect::<Result<_>>()?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); levels.len()];
    for (row, &code) in codes.iter().enumerate() {
        members[code].push(row);
    }

    let p = fixed_cols.len();
    let q = random_cols.len();
    let mut groups = Vec::with_capacity(levels.len());
    for (label, rows) in levels.iter().zip(members) {
        if rows.is_empty() {
            return Err(Error::EmptyGroup(label.clone()));
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, p, |i, j| fixed_cols[j].1[rows[i]]);
        let z = DMatrix::from_fn(n, q, |i, j| random_cols[j].1[rows[i]]);
        let yi = DVector::from_iterator(n, rows.iter().map(|&r| y[r]));
        let x_rank = linalg::rank(&x);
        groups.push(Group {
            label: label.clone(),
            rows,
            y: yi,
            x,
            z,
            x_rank,
        });
    }

    let mut design = GroupedDesign {
        groups,
        fixed_names: fixed_cols.into_iter().map(|(n, _)| n).collect(),
        random_names: random_cols.into_iter().map(|(n, _)| n).collect(),
        fixed_term_columns: term_ranges,
        warnings: Vec::new(),
    };
    design.check_global_rank();
    Ok(design)
}

/// Row counts per group label, for quick summaries.
pub fn group_sizes(design: &GroupedDesign) -> BTreeMap<String, usize> {
    design.groups.iter().map(|g| (g.label.clone(), g.n())).collect()
}
