//! Typed, column-oriented tables loaded from CSV.
//!
//! Every cell is either a typed value or an explicit missing marker. The schema
//! is declared up front; there is no type inference.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dtype {
    Numeric,
    Categorical,
    Boolean,
    Text,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dtype::Numeric => "numeric",
            Dtype::Categorical => "categorical",
            Dtype::Boolean => "boolean",
            Dtype::Text => "text",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Feature,
    Key,
    TargetMetric,
    QuasiIdentifier,
    Excluded,
    GroundTruth,
}

impl Role {
    /// Columns that may feed models, slices and prompts. Quasi-identifiers are
    /// ordinary features that additionally take part in k-anonymity checks.
    pub fn is_model_input(self) -> bool {
        matches!(self, Role::Feature | Role::QuasiIdentifier)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub dtype: Dtype,
    pub role: Role,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, dtype: Dtype, role: Role) -> Self {
        Self {
            name: name.into(),
            dtype,
            role,
        }
    }
}

/// Checks the role invariants of a schema: unique names, exactly one key and
/// exactly one numeric target-metric column.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for c in schema {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::Schema(format!("column {:?} declared twice", c.name)));
        }
    }
    let keys = schema.iter().filter(|c| c.role == Role::Key).count();
    if keys != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one key column, found {keys}"
        )));
    }
    let targets: Vec<_> = schema
        .iter()
        .filter(|c| c.role == Role::TargetMetric)
        .collect();
    if targets.len() != 1 {
        return Err(Error::Schema(format!(
            "expected exactly one target-metric column, found {}",
            targets.len()
        )));
    }
    if targets[0].dtype != Dtype::Numeric {
        return Err(Error::Schema(format!(
            "target-metric column {:?} must be numeric",
            targets[0].name
        )));
    }
    Ok(())
}

/// Column storage. Categorical and text columns share string storage.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
    Boolean(Vec<Option<bool>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
            ColumnData::Boolean(v) => v[row].is_none(),
        }
    }

    pub fn value(&self, row: usize) -> Value<'_> {
        match self {
            ColumnData::Numeric(v) => v[row].map_or(Value::Missing, Value::Num),
            ColumnData::Text(v) => v[row].as_deref().map_or(Value::Missing, Value::Str),
            ColumnData::Boolean(v) => v[row].map_or(Value::Missing, Value::Bool),
        }
    }

    /// Appends copies of the given rows.
    pub fn append_rows(&mut self, rows: &[usize]) {
        match self {
            ColumnData::Numeric(v) => rows.iter().for_each(|&r| v.push(v[r])),
            ColumnData::Text(v) => rows.iter().for_each(|&r| v.push(v[r].clone())),
            ColumnData::Boolean(v) => rows.iter().for_each(|&r| v.push(v[r])),
        }
    }

    pub fn set_missing(&mut self, row: usize) {
        match self {
            ColumnData::Numeric(v) => v[row] = None,
            ColumnData::Text(v) => v[row] = None,
            ColumnData::Boolean(v) => v[row] = None,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
            ColumnData::Boolean(v) => ColumnData::Boolean(rows.iter().map(|&r| v[r]).collect()),
        }
    }

    fn empty_for(dtype: Dtype) -> ColumnData {
        match dtype {
            Dtype::Numeric => ColumnData::Numeric(Vec::new()),
            Dtype::Categorical | Dtype::Text => ColumnData::Text(Vec::new()),
            Dtype::Boolean => ColumnData::Boolean(Vec::new()),
        }
    }

    fn matches_dtype(&self, dtype: Dtype) -> bool {
        matches!(
            (self, dtype),
            (ColumnData::Numeric(_), Dtype::Numeric)
                | (ColumnData::Text(_), Dtype::Categorical | Dtype::Text)
                | (ColumnData::Boolean(_), Dtype::Boolean)
        )
    }
}

/// A borrowed cell value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value<'a> {
    Missing,
    Num(f64),
    Str(&'a str),
    Bool(bool),
}

impl Value<'_> {
    pub fn render(&self) -> String {
        match self {
            Value::Missing => String::new(),
            Value::Num(x) => format_f64(*x),
            Value::Str(s) => (*s).to_string(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug)]
pub struct Table {
    schema: Vec<ColumnSchema>,
    columns: Vec<ColumnData>,
    n_rows: usize,
    parse_failures: usize,
    name_index: HashMap<String, usize>,
    key_col: usize,
    key_index: HashMap<String, usize>,
}

/// Tables are equal when their schemas and cell values are.
impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.columns == other.columns
    }
}

impl Table {
    /// Builds a table from columns already in typed form.
    pub fn from_columns(schema: Vec<ColumnSchema>, columns: Vec<ColumnData>) -> Result<Table> {
        validate_schema(&schema)?;
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} schema entries but {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (c, data) in schema.iter().zip(&columns) {
            if data.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column {:?} has {} rows, expected {n_rows}",
                    c.name,
                    data.len()
                )));
            }
            if !data.matches_dtype(c.dtype) {
                return Err(Error::Schema(format!(
                    "column {:?} storage does not match dtype {}",
                    c.name, c.dtype
                )));
            }
        }
        let name_index = schema
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect();
        let key_col = schema.iter().position(|c| c.role == Role::Key).unwrap();
        let mut key_index = HashMap::with_capacity(n_rows);
        for row in 0..n_rows {
            let key = columns[key_col].value(row);
            if key == Value::Missing {
                return Err(Error::Schema(format!("missing key in row {row}")));
            }
            let key = key.render();
            if key_index.insert(key.clone(), row).is_some() {
                return Err(Error::DuplicateKey { key });
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
            parse_failures: 0,
            name_index,
            key_col,
            key_index,
        })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of numeric or boolean cells that failed to parse and were stored
    /// as missing.
    pub fn parse_failures(&self) -> usize {
        self.parse_failures
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| (0..self.n_rows).filter(|&r| c.is_missing(r)).count())
            .sum()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn column_at(&self, idx: usize) -> &ColumnData {
        &self.columns[idx]
    }

    pub fn column_schema(&self, name: &str) -> Option<&ColumnSchema> {
        self.column_index(name).map(|i| &self.schema[i])
    }

    pub fn columns_with_role(&self, role: Role) -> impl Iterator<Item = &ColumnSchema> {
        self.schema.iter().filter(move |c| c.role == role)
    }

    /// Feature and quasi-identifier columns, in schema order.
    pub fn model_input_columns(&self) -> Vec<&ColumnSchema> {
        self.schema.iter().filter(|c| c.role.is_model_input()).collect()
    }

    pub fn key_column(&self) -> &ColumnSchema {
        &self.schema[self.key_col]
    }

    pub fn target_column(&self) -> &ColumnSchema {
        self.schema
            .iter()
            .find(|c| c.role == Role::TargetMetric)
            .expect("validated schema has a target-metric column")
    }

    pub fn key(&self, row: usize) -> String {
        self.columns[self.key_col].value(row).render()
    }

    pub fn keys(&self) -> Vec<String> {
        (0..self.n_rows).map(|r| self.key(r)).collect()
    }

    pub fn row_of_key(&self, key: &str) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    pub fn value(&self, col: usize, row: usize) -> Value<'_> {
        self.columns[col].value(row)
    }

    pub fn numeric(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.column(name)? {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn text(&self, name: &str) -> Option<&[Option<String>]> {
        match self.column(name)? {
            ColumnData::Text(v) => Some(v),
            _ => None,
        }
    }

    /// New table holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self.columns.iter().map(|c| c.select(rows)).collect();
        Table::from_columns(self.schema.clone(), columns)
            .expect("row subset of a valid table is valid")
    }

    /// Consumes the table and returns its columns for in-place modification.
    pub fn into_parts(self) -> (Vec<ColumnSchema>, Vec<ColumnData>) {
        (self.schema, self.columns)
    }

    /// Same data under a different schema with identical names and dtypes
    /// (roles may change).
    pub fn with_schema(&self, schema: Vec<ColumnSchema>) -> Result<Table> {
        for (old, new) in self.schema.iter().zip(&schema) {
            if old.name != new.name || old.dtype != new.dtype {
                return Err(Error::Schema(format!(
                    "schema change must keep names and dtypes ({} vs {})",
                    old.name, new.name
                )));
            }
        }
        Table::from_columns(schema, self.columns.clone())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(self.schema.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.schema.len());
        for row in 0..self.n_rows {
            record.clear();
            record.extend(self.columns.iter().map(|c| c.value(row).render()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "t" | "1" | "yes" | "y" => Some(true),
        "false" | "f" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Reads a UTF-8 CSV with a header row into a typed table.
///
/// Header names must equal the schema names as a set; columns are reordered to
/// schema order. Numeric and boolean cells that fail to parse become missing
/// and are counted in [`Table::parse_failures`].
pub fn load_csv(path: &Path, schema: &[ColumnSchema]) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &[ColumnSchema]) -> Result<Table> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let header_names: Vec<&str> = headers.iter().collect();
    let header_set: BTreeSet<&str> = header_names.iter().copied().collect();
    let schema_set: BTreeSet<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    if header_set.len() != header_names.len() || header_set != schema_set {
        let missing: Vec<_> = schema_set.difference(&header_set).collect();
        let extra: Vec<_> = header_set.difference(&schema_set).collect();
        return Err(Error::Schema(format!(
            "header does not match schema (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    let positions: Vec<usize> = schema
        .iter()
        .map(|c| header_names.iter().position(|h| *h == c.name).unwrap())
        .collect();

    let mut columns: Vec<ColumnData> = schema.iter().map(|c| ColumnData::empty_for(c.dtype)).collect();
    let mut failures = 0usize;
    for record in rdr.records() {
        let record = record?;
        for (col, &pos) in columns.iter_mut().zip(&positions) {
            let raw = record.get(pos).unwrap_or("").trim();
            let missing = is_missing_token(raw);
            match col {
                ColumnData::Numeric(v) => {
                    if missing {
                        v.push(None);
                    } else {
                        match raw.parse::<f64>() {
                            Ok(x) if x.is_finite() => v.push(Some(x)),
                            _ => {
                                failures += 1;
                                v.push(None);
                            }
                        }
                    }
                }
                ColumnData::Text(v) => v.push((!missing).then(|| raw.to_string())),
                ColumnData::Boolean(v) => {
                    if missing {
                        v.push(None);
                    } else {
                        let b = parse_bool(raw);
                        failures += usize::from(b.is_none());
                        v.push(b);
                    }
                }
            }
        }
    }
    let mut table = Table::from_columns(schema.to_vec(), columns)?;
    table.parse_failures = failures;
    Ok(table)
}
