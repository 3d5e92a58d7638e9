use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::MAX_FEATURES;
use super::provider::ProviderResponse;
use crate::dsl::{compile, ColumnTypes, DslError, DslExpression, Ty};
use crate::error::{Error, Result};
use crate::gbt::FeatureMatrix;
use crate::stats::SchemaEntry;
use crate::table::Table;

/// Suffix of the indicator column added next to a feature with missing values.
pub const MISSING_SUFFIX: &str = "__missing";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefStatus {
    Proposed,
    Validated,
    ExpressionReady,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDefinition {
    pub name: String,
    pub source_columns: Vec<String>,
    pub logic_description: String,
    pub expression: Option<String>,
    pub status: DefStatus,
}

#[derive(Deserialize)]
struct RawDefinition {
    name: String,
    source_columns: Vec<String>,
    #[serde(default)]
    logic_description: String,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.len() <= 64
        && !name.ends_with(MISSING_SUFFIX)
        && !crate::dsl::is_keyword(name)
}

fn array_field<'a>(payload: &'a Value, field: &str) -> Option<&'a Vec<Value>> {
    payload.get(field).and_then(Value::as_array).or_else(|| payload.as_array())
}

/// Keeps the well-formed proposals that reference only `schema` columns, in
/// order, dropping later duplicates; at most twelve survive.
pub fn parse_validate_definitions(resp: &ProviderResponse, schema: &[SchemaEntry]) -> Result<Vec<FeatureDefinition>> {
    let known: BTreeSet<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    let items = array_field(&resp.payload, "features")
        .ok_or_else(|| Error::Synthesis("response has no \"features\" list".into()))?;
    let mut out: Vec<FeatureDefinition> = Vec::new();
    for item in items {
        let raw: RawDefinition = match serde_json::from_value(item.clone()) {
            Ok(r) => r,
            Err(e) => {
                warn!("dropping malformed feature definition: {e}");
                continue;
            }
        };
        if !valid_name(&raw.name) || known.contains(raw.name.as_str()) {
            warn!("dropping feature with unusable name {:?}", raw.name);
            continue;
        }
        if out.iter().any(|d| d.name == raw.name) {
            warn!("dropping duplicate feature name {:?}", raw.name);
            continue;
        }
        if raw.source_columns.is_empty() {
            warn!("dropping feature {:?}: no source columns", raw.name);
            continue;
        }
        if let Some(bad) = raw.source_columns.iter().find(|c| !known.contains(c.as_str())) {
            warn!("dropping feature {:?}: column {bad:?} is unknown or not allowed", raw.name);
            continue;
        }
        let mut cols = Vec::new();
        for c in raw.source_columns {
            if !cols.contains(&c) {
                cols.push(c);
            }
        }
        out.push(FeatureDefinition {
            name: raw.name,
            source_columns: cols,
            logic_description: raw.logic_description,
            expression: None,
            status: DefStatus::Validated,
        });
        if out.len() == MAX_FEATURES {
            break;
        }
    }
    if out.is_empty() {
        return Err(Error::Synthesis("no valid feature definitions in response".into()));
    }
    Ok(out)
}

/// Expression text per feature name from an expression-phase response.
pub fn parse_expressions(resp: &ProviderResponse) -> Result<BTreeMap<String, String>> {
    let items = array_field(&resp.payload, "expressions")
        .ok_or_else(|| Error::Synthesis("response has no \"expressions\" list".into()))?;
    let mut out = BTreeMap::new();
    for item in items {
        let (Some(name), Some(expr)) = (
            item.get("name").and_then(Value::as_str),
            item.get("expression").and_then(Value::as_str),
        ) else {
            warn!("dropping malformed expression entry");
            continue;
        };
        out.entry(name.to_string()).or_insert_with(|| expr.to_string());
    }
    Ok(out)
}

pub fn schema_types(schema: &[SchemaEntry]) -> ColumnTypes {
    schema.iter().map(|c| (c.name.clone(), c.dtype)).collect()
}

/// Compiles `text` for `def`, restricted to its source columns. Sets the
/// status to expression-ready on success and failed otherwise.
pub fn compile_expression(
    def: &mut FeatureDefinition,
    text: &str,
    schema: &[SchemaEntry],
) -> std::result::Result<DslExpression, DslError> {
    if def.status != DefStatus::Validated {
        return Err(DslError::Type(format!("definition {:?} is not validated", def.name)));
    }
    let allowed: BTreeSet<String> = def.source_columns.iter().cloned().collect();
    let result = compile(text, &schema_types(schema), Some(&allowed)).and_then(|e| match e.result_type() {
        Ty::Num | Ty::Bool => Ok(e),
        Ty::Str => Err(DslError::Type("feature expression must be numeric or boolean".into())),
    });
    def.expression = Some(text.to_string());
    def.status = if result.is_ok() {
        DefStatus::ExpressionReady
    } else {
        DefStatus::Failed
    };
    result
}

/// One numeric column per expression, missing results coerced to 0 with a
/// `<name>__missing` indicator added when any row was missing.
pub fn evaluate_features(table: &Table, exprs: &[(String, DslExpression)]) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::new(table.n_rows());
    for (name, e) in exprs {
        let bound = e.bind(table)?;
        let values: Vec<Option<f64>> = (0..table.n_rows()).into_par_iter().map(|r| bound.numeric(r)).collect();
        let any_missing = values.iter().any(Option::is_none);
        m.push(name.clone(), values.iter().map(|v| v.unwrap_or(0.0)).collect())?;
        if any_missing {
            m.push(
                format!("{name}{MISSING_SUFFIX}"),
                values.iter().map(|v| if v.is_none() { 1.0 } else { 0.0 }).collect(),
            )?;
        }
    }
    Ok(m)
}
