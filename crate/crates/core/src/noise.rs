//! Rule-based inference of noisy rows.
//!
//! Rules are declarative entries, each naming one mechanism plus its
//! parameters and an optional row scope written in the expression language.
//! They compare the test table against a baseline (the control table) paired
//! on the key column. Ground-truth columns are never read: every column a rule
//! touches is recorded and checked against the schema roles.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{column_types, compile};
use crate::error::{Error, Result};
use crate::table::{ColumnData, Dtype, Role, Table, Value};

pub const DEFAULT_OUTLIER_MULTIPLE: f64 = 3.0;

fn default_outlier_multiple() -> f64 {
    DEFAULT_OUTLIER_MULTIPLE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "kebab-case")]
pub enum Mechanism {
    /// Rows whose non-key tuple occurs more than once, and rows whose key is
    /// absent from the baseline. `columns` defaults to every feature,
    /// quasi-identifier and target-metric column.
    DuplicateRow {
        #[serde(default)]
        columns: Option<Vec<String>>,
    },
    /// Values above `threshold` times the paired baseline value, or times the
    /// baseline median when the row is unpaired or its baseline is not positive.
    OutlierMultiple {
        column: String,
        #[serde(default = "default_outlier_multiple")]
        threshold: f64,
    },
    MissingValue { columns: Vec<String> },
    /// Exact multiples of `granularity` whose paired baseline value was not one.
    SuspiciousRounding { column: String, granularity: f64 },
    /// Exact zeros whose paired baseline value was nonzero.
    ZeroValue { column: String },
    /// Values outside `allowed`; without a list, the categories present in the
    /// baseline column form the whitelist.
    TextAnomaly {
        column: String,
        #[serde(default)]
        allowed: Option<Vec<String>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRule {
    pub name: String,
    #[serde(flatten)]
    pub mechanism: Mechanism,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

impl NoiseRule {
    pub fn new(name: impl Into<String>, mechanism: Mechanism) -> Self {
        Self {
            name: name.into(),
            mechanism,
            scope: None,
        }
    }

    pub fn with_scope(mut self, scope: impl Into<String>) -> Self {
        self.scope = Some(scope.into());
        self
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::NoiseRule {
            rule: self.name.clone(),
            message: message.into(),
        }
    }
}

/// Inferred per-row noise labels for every row of the test table.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLabels {
    pub keys: Vec<String>,
    pub labels: Vec<u8>,
    pub triggers: Vec<Vec<String>>,
    /// Every column consulted while applying the rules, including scopes.
    pub columns_read: BTreeSet<String>,
}

impl NoiseLabels {
    pub fn n_flagged(&self) -> usize {
        self.labels.iter().map(|&l| l as usize).sum()
    }

    /// Labels reordered to `rows` of the test table.
    pub fn select(&self, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "label", "rules"])?;
        for ((k, l), t) in self.keys.iter().zip(&self.labels).zip(&self.triggers) {
            w.write_record([k.as_str(), &l.to_string(), &t.join(";")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        writeln!(out, "key,label,rules").unwrap();
        for ((k, l), t) in self.keys.iter().zip(&self.labels).zip(&self.triggers) {
            writeln!(out, "{k},{l},{}", t.join(";")).unwrap();
        }
        String::from_utf8(out).unwrap()
    }
}

/// A default rule set derived from the schema: duplicates, missing values in
/// every model-input and target column, zeroed numeric values, unseen
/// categories, and outliers of the target metric.
pub fn default_rules(table: &Table) -> Vec<NoiseRule> {
    let mut rules = vec![NoiseRule::new(
        "duplicate-row",
        Mechanism::DuplicateRow { columns: None },
    )];
    let readable: Vec<_> = table
        .schema()
        .iter()
        .filter(|c| c.role.is_model_input() || c.role == Role::TargetMetric)
        .collect();
    rules.push(NoiseRule::new(
        "missing-value",
        Mechanism::MissingValue {
            columns: readable.iter().map(|c| c.name.clone()).collect(),
        },
    ));
    let target = table.target_column().name.clone();
    rules.push(NoiseRule::new(
        format!("outlier-{target}"),
        Mechanism::OutlierMultiple {
            column: target,
            threshold: DEFAULT_OUTLIER_MULTIPLE,
        },
    ));
    for c in &readable {
        match c.dtype {
            Dtype::Numeric => rules.push(NoiseRule::new(
                format!("zero-{}", c.name),
                Mechanism::ZeroValue {
                    column: c.name.clone(),
                },
            )),
            Dtype::Categorical => rules.push(NoiseRule::new(
                format!("text-{}", c.name),
                Mechanism::TextAnomaly {
                    column: c.name.clone(),
                    allowed: None,
                },
            )),
            Dtype::Boolean | Dtype::Text => {}
        }
    }
    rules
}

struct Ctx<'a> {
    test: &'a Table,
    baseline: &'a Table,
    /// Baseline row paired with each test row.
    paired: Vec<Option<usize>>,
}

impl<'a> Ctx<'a> {
    fn column(&self, rule: &NoiseRule, name: &str) -> Result<(&'a ColumnData, &'a ColumnData)> {
        let schema = self
            .test
            .column_schema(name)
            .ok_or_else(|| rule.err(format!("unknown column {name:?}")))?;
        if !(schema.role.is_model_input() || schema.role == Role::TargetMetric) {
            return Err(rule.err(format!(
                "column {name:?} has role {:?}; rules may read only feature and target-metric columns",
                schema.role
            )));
        }
        let base = self
            .baseline
            .column(name)
            .ok_or_else(|| rule.err(format!("column {name:?} missing from baseline")))?;
        Ok((self.test.column(name).unwrap(), base))
    }

    fn numeric(&self, rule: &NoiseRule, name: &str) -> Result<(&'a [Option<f64>], &'a [Option<f64>])> {
        match self.column(rule, name)? {
            (ColumnData::Numeric(t), ColumnData::Numeric(b)) => Ok((t, b)),
            _ => Err(rule.err(format!("column {name:?} is not numeric"))),
        }
    }

    fn base_num(&self, base: &[Option<f64>], row: usize) -> Option<f64> {
        self.paired[row].and_then(|b| base[b])
    }
}

fn is_multiple(x: f64, g: f64) -> bool {
    let q = x / g;
    (q - q.round()).abs() <= 1e-9 * q.abs().max(1.0)
}

fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn eval_rule(ctx: &Ctx<'_>, rule: &NoiseRule) -> Result<(Vec<bool>, BTreeSet<String>)> {
    let n = ctx.test.n_rows();
    let mut read = BTreeSet::new();
    let mut flags = vec![false; n];
    match &rule.mechanism {
        Mechanism::DuplicateRow { columns } => {
            let names: Vec<String> = match columns {
                Some(c) => c.clone(),
                None => ctx
                    .test
                    .schema()
                    .iter()
                    .filter(|c| c.role.is_model_input() || c.role == Role::TargetMetric)
                    .map(|c| c.name.clone())
                    .collect(),
            };
            let cols = names
                .iter()
                .map(|c| ctx.column(rule, c).map(|(t, _)| t))
                .collect::<Result<Vec<_>>>()?;
            read.extend(names);
            read.insert(ctx.test.key_column().name.clone());
            let tuples: Vec<Vec<String>> = (0..n)
                .map(|r| cols.iter().map(|c| c.value(r).render()).collect())
                .collect();
            let mut counts: HashMap<&[String], usize> = HashMap::new();
            for t in &tuples {
                *counts.entry(t.as_slice()).or_default() += 1;
            }
            for r in 0..n {
                flags[r] = counts[tuples[r].as_slice()] > 1 || ctx.paired[r].is_none();
            }
        }
        Mechanism::OutlierMultiple { column, threshold } => {
            if !(*threshold > 0.0) {
                return Err(rule.err("threshold must be positive"));
            }
            let (t, b) = ctx.numeric(rule, column)?;
            read.insert(column.clone());
            let robust = median(b).or_else(|| median(t));
            for r in 0..n {
                let Some(v) = t[r] else { continue };
                let reference = match ctx.base_num(b, r) {
                    Some(base) if base > 0.0 => Some(base),
                    _ => robust.filter(|&m| m > 0.0),
                };
                flags[r] = reference.is_some_and(|m| v > threshold * m);
            }
        }
        Mechanism::MissingValue { columns } => {
            for c in columns {
                let (t, _) = ctx.column(rule, c)?;
                read.insert(c.clone());
                for (r, f) in flags.iter_mut().enumerate() {
                    *f |= t.is_missing(r);
                }
            }
        }
        Mechanism::SuspiciousRounding { column, granularity } => {
            if !(*granularity > 0.0) {
                return Err(rule.err("granularity must be positive"));
            }
            let (t, b) = ctx.numeric(rule, column)?;
            read.insert(column.clone());
            for r in 0..n {
                if let (Some(v), Some(base)) = (t[r], ctx.base_num(b, r)) {
                    flags[r] = is_multiple(v, *granularity) && !is_multiple(base, *granularity);
                }
            }
        }
        Mechanism::ZeroValue { column } => {
            let (t, b) = ctx.numeric(rule, column)?;
            read.insert(column.clone());
            for r in 0..n {
                if let (Some(v), Some(base)) = (t[r], ctx.base_num(b, r)) {
                    flags[r] = v == 0.0 && base != 0.0;
                }
            }
        }
        Mechanism::TextAnomaly { column, allowed } => {
            let (t, b) = ctx.column(rule, column)?;
            read.insert(column.clone());
            let whitelist: BTreeSet<String> = match allowed {
                Some(list) => list.iter().cloned().collect(),
                None => (0..ctx.baseline.n_rows())
                    .filter_map(|r| match b.value(r) {
                        Value::Missing => None,
                        v => Some(v.render()),
                    })
                    .collect(),
            };
            for (r, f) in flags.iter_mut().enumerate() {
                *f = match t.value(r) {
                    Value::Missing => false,
                    v => !whitelist.contains(&v.render()),
                };
            }
        }
    }
    if let Some(scope) = &rule.scope {
        let expr = compile(scope, &column_types(ctx.test), None)
            .map_err(|e| rule.err(format!("scope: {e}")))?;
        for c in expr.columns() {
            ctx.column(rule, c)?;
        }
        read.extend(expr.columns().iter().cloned());
        let mask = expr
            .eval_mask(ctx.test)
            .map_err(|e| rule.err(format!("scope: {e}")))?;
        for (f, m) in flags.iter_mut().zip(mask) {
            *f &= m;
        }
    }
    Ok((flags, read))
}

/// Applies `rules` to every row of `test`, pairing rows with `baseline` on the
/// key column.
pub fn apply_rules(test: &Table, rules: &[NoiseRule], baseline: &Table) -> Result<NoiseLabels> {
    let mut names = BTreeSet::new();
    for r in rules {
        if !names.insert(r.name.as_str()) {
            return Err(r.err("duplicate rule name"));
        }
    }
    let paired = (0..test.n_rows())
        .map(|r| baseline.row_of_key(&test.key(r)))
        .collect();
    let ctx = Ctx {
        test,
        baseline,
        paired,
    };
    let results = rules
        .par_iter()
        .map(|rule| eval_rule(&ctx, rule))
        .collect::<Result<Vec<_>>>()?;

    let n = test.n_rows();
    let mut triggers = vec![Vec::new(); n];
    let mut columns_read = BTreeSet::new();
    for (rule, (flags, read)) in rules.iter().zip(results) {
        columns_read.extend(read);
        for (t, f) in triggers.iter_mut().zip(flags) {
            if f {
                t.push(rule.name.clone());
            }
        }
    }
    debug_assert!(columns_read.iter().all(|c| test
        .column_schema(c)
        .is_some_and(|s| s.role != Role::GroundTruth)));
    Ok(NoiseLabels {
        keys: test.keys(),
        labels: triggers.iter().map(|t| u8::from(!t.is_empty())).collect(),
        triggers,
        columns_read,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::ColumnSchema;

    fn schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::new("id", Dtype::Text, Role::Key),
            ColumnSchema::new("ENC", Dtype::Categorical, Role::Feature),
            ColumnSchema::new("AGE", Dtype::Numeric, Role::Feature),
            ColumnSchema::new("COST", Dtype::Numeric, Role::TargetMetric),
            ColumnSchema::new("is_noise", Dtype::Boolean, Role::GroundTruth),
        ]
    }

    fn table(ids: &[&str], enc: &[&str], age: &[f64], cost: &[Option<f64>]) -> Table {
        let n = ids.len();
        Table::from_columns(
            schema(),
            vec![
                ColumnData::Text(ids.iter().map(|s| Some(s.to_string())).collect()),
                ColumnData::Text(enc.iter().map(|s| Some(s.to_string())).collect()),
                ColumnData::Numeric(age.iter().map(|&a| Some(a)).collect()),
                ColumnData::Numeric(cost.to_vec()),
                ColumnData::Boolean(vec![Some(true); n]),
            ],
        )
        .unwrap()
    }

    fn base() -> Table {
        table(
            &["a", "b", "c", "d"],
            &["x", "y", "x", "z"],
            &[30.0, 40.0, 50.0, 60.0],
            &[Some(100.0), Some(110.0), Some(123.0), Some(90.0)],
        )
    }

    #[test]
    fn clean_clone_has_no_flags() {
        let b = base();
        let labels = apply_rules(&b, &default_rules(&b), &b).unwrap();
        assert_eq!(labels.n_flagged(), 0);
        assert!(!labels.columns_read.contains("is_noise"));
    }

    #[test]
    fn duplicate_flags_group_and_new_key() {
        let b = base();
        let t = table(
            &["a", "b", "c", "d", "e"],
            &["x", "y", "x", "z", "y"],
            &[30.0, 40.0, 50.0, 60.0, 40.0],
            &[Some(100.0), Some(110.0), Some(123.0), Some(90.0), Some(110.0)],
        );
        let rules = [NoiseRule::new("dup", Mechanism::DuplicateRow { columns: None })];
        let l = apply_rules(&t, &rules, &b).unwrap();
        assert_eq!(l.labels, vec![0, 1, 0, 0, 1]);
        assert_eq!(l.triggers[4], vec!["dup".to_string()]);
    }

    #[test]
    fn outlier_four_times_baseline() {
        let b = base();
        let t = table(
            &["a", "b", "c", "d"],
            &["x", "y", "x", "z"],
            &[30.0, 40.0, 50.0, 60.0],
            &[Some(400.0), Some(120.0), Some(123.0), Some(90.0)],
        );
        let rules = [NoiseRule::new(
            "out",
            Mechanism::OutlierMultiple {
                column: "COST".into(),
                threshold: 3.0,
            },
        )];
        assert_eq!(apply_rules(&t, &rules, &b).unwrap().labels, vec![1, 0, 0, 0]);
    }

    #[test]
    fn rounding_zero_missing_text_and_scope() {
        let b = base();
        let t = table(
            &["a", "b", "c", "d"],
            &["x", "y", "q", "z"],
            &[30.0, 40.0, 50.0, 60.0],
            &[Some(0.0), None, Some(120.0), Some(90.0)],
        );
        let rules = vec![
            NoiseRule::new("zero", Mechanism::ZeroValue { column: "COST".into() }),
            NoiseRule::new(
                "miss",
                Mechanism::MissingValue {
                    columns: vec!["COST".into()],
                },
            ),
            NoiseRule::new(
                "round",
                Mechanism::SuspiciousRounding {
                    column: "COST".into(),
                    granularity: 10.0,
                },
            ),
            NoiseRule::new(
                "text",
                Mechanism::TextAnomaly {
                    column: "ENC".into(),
                    allowed: None,
                },
            )
            .with_scope("AGE >= 50"),
        ];
        let l = apply_rules(&t, &rules, &b).unwrap();
        assert_eq!(l.triggers[0], vec!["zero".to_string()]);
        assert_eq!(l.triggers[1], vec!["miss".to_string()]);
        assert_eq!(l.triggers[2], vec!["round".to_string(), "text".to_string()]);
        // 90 was already a multiple of 10 in the baseline
        assert!(l.triggers[3].is_empty());
        assert!(l.columns_read.contains("AGE"));
    }

    #[test]
    fn ground_truth_column_rejected() {
        let b = base();
        let rules = [NoiseRule::new(
            "bad",
            Mechanism::MissingValue {
                columns: vec!["is_noise".into()],
            },
        )];
        assert!(matches!(
            apply_rules(&b, &rules, &b),
            Err(Error::NoiseRule { .. })
        ));
        let scoped = [NoiseRule::new("s", Mechanism::ZeroValue { column: "COST".into() })
            .with_scope("is_noise")];
        assert!(apply_rules(&b, &scoped, &b).is_err());
    }

    #[test]
    fn unknown_mechanism_and_bad_scope_are_errors() {
        let r: std::result::Result<NoiseRule, _> =
            serde_json::from_str(r#"{"name":"x","mechanism":"teleport"}"#);
        assert!(r.is_err());
        let r: NoiseRule = serde_json::from_str(
            r#"{"name":"x","mechanism":"outlier-multiple","column":"COST"}"#,
        )
        .unwrap();
        assert_eq!(
            r.mechanism,
            Mechanism::OutlierMultiple {
                column: "COST".into(),
                threshold: 3.0
            }
        );
        let b = base();
        let bad = [r.with_scope("AGE >")];
        assert!(apply_rules(&b, &bad, &b).is_err());
    }

    #[test]
    fn label_csv_export() {
        let b = base();
        let l = apply_rules(&b, &default_rules(&b), &b).unwrap();
        assert!(l.to_csv_string().starts_with("key,label,rules\na,0,\n"));
    }
}
