use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::table::{ColumnData, Table};

/// Dense column-major feature matrix. Missing values are `NaN`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize) -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            n_rows,
        }
    }

    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::new(n_rows);
        for (n, c) in names.into_iter().zip(columns) {
            m.push(n, c)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows {
            return Err(Error::InvalidInput(format!(
                "feature {name:?} has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        if self.names.contains(&name) {
            return Err(Error::InvalidInput(format!("duplicate feature name {name:?}")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Appends every column of `other`.
    pub fn extend(&mut self, other: FeatureMatrix) -> Result<()> {
        for (n, c) in other.names.into_iter().zip(other.columns) {
            self.push(n, c)?;
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn get(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            n_rows: rows.len(),
        }
    }
}

/// Levels seen fewer times than this are pooled into `COLUMN=(other)`.
pub const MIN_LEVEL_COUNT: usize = 5;
/// At most this many levels of one column get their own indicator.
pub const MAX_LEVELS: usize = 64;
pub const OTHER_LEVEL: &str = "(other)";

/// Encodes table columns as numeric features: numeric columns pass through,
/// booleans become 0/1, and categorical columns are one-hot encoded as
/// `COLUMN=level` over the frequent levels present, rare levels sharing one
/// `COLUMN=(other)` indicator. Missing cells become `NaN` in every derived
/// column. Free-text columns are skipped.
pub fn encode_columns(table: &Table, columns: &[String]) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::new(table.n_rows());
    let mut seen = HashSet::new();
    for name in columns {
        if !seen.insert(name) {
            continue;
        }
        let col = table
            .column(name)
            .ok_or_else(|| Error::Schema(format!("unknown feature column {name:?}")))?;
        let dtype = table.column_schema(name).unwrap().dtype;
        match col {
            ColumnData::Numeric(v) => {
                m.push(name.clone(), v.iter().map(|x| x.unwrap_or(f64::NAN)).collect())?
            }
            ColumnData::Boolean(v) => m.push(
                name.clone(),
                v.iter()
                    .map(|b| b.map_or(f64::NAN, |b| if b { 1.0 } else { 0.0 }))
                    .collect(),
            )?,
            ColumnData::Text(v) => {
                if dtype == crate::table::Dtype::Text {
                    continue;
                }
                let mut counts: HashMap<&str, usize> = HashMap::new();
                for s in v.iter().flatten() {
                    *counts.entry(s.as_str()).or_default() += 1;
                }
                let mut by_count: Vec<(&str, usize)> = counts.into_iter().collect();
                by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                let kept: BTreeSet<&str> = by_count
                    .iter()
                    .filter(|(_, c)| *c >= MIN_LEVEL_COUNT)
                    .take(MAX_LEVELS)
                    .map(|(l, _)| *l)
                    .collect();
                for &level in &kept {
                    m.push(
                        format!("{name}={level}"),
                        v.iter()
                            .map(|x| match x {
                                None => f64::NAN,
                                Some(s) if s == level => 1.0,
                                Some(_) => 0.0,
                            })
                            .collect(),
                    )?;
                }
                if kept.len() < by_count.len() {
                    m.push(
                        format!("{name}={OTHER_LEVEL}"),
                        v.iter()
                            .map(|x| match x {
                                None => f64::NAN,
                                Some(s) if !kept.contains(s.as_str()) => 1.0,
                                Some(_) => 0.0,
                            })
                            .collect(),
                    )?;
                }
            }
        }
    }
    Ok(m)
}
