//! Prompt construction. Prompts carry schema names and types plus the
//! exported insight summary, never row values.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::definitions::{DefStatus, FeatureDefinition};
use crate::error::{Error, Result};
use crate::stats::{InsightSummary, SchemaEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Intervention,
    Noise,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Intervention => "intervention",
            Task::Noise => "noise",
        }
    }

    fn framing(self) -> &'static str {
        match self {
            Task::Intervention => {
                "Target: a row's metric differs between the control and test snapshots.\n\
                 Propose features that help a gradient-boosted classifier recognize the \
                 population segment whose metric was changed by a deliberate intervention. \
                 Favor interactions between demographic, financial and payer attributes \
                 that the insights suggest act jointly."
            }
            Task::Noise => {
                "Target: a row was flagged by data-quality checks (duplicates, outliers, \
                 missing values, rounding, zeroed values, corrupted text).\n\
                 Propose features that help a gradient-boosted classifier recognize rows \
                 likely to carry observational noise. Favor indicators of missingness, \
                 implausible magnitudes, suspicious round values and unusual categories."
            }
        }
    }
}

pub const MAX_FEATURES: usize = 12;

pub(crate) const PHASE_DEFINITION: &str = "definition";
pub(crate) const PHASE_EXPRESSION: &str = "expression";

fn section(out: &mut String, title: &str, body: &str) {
    writeln!(out, "=== {title} ===").unwrap();
    out.push_str(body.trim_end());
    out.push_str("\n\n");
}

fn schema_lines(schema: &[SchemaEntry]) -> String {
    schema
        .iter()
        .map(|c| format!("- {} ({})\n", c.name, c.dtype))
        .collect()
}

/// Insights as published: slice, size and statistics of each exported slice.
#[derive(Serialize)]
struct PromptInsights<'a> {
    target: &'a str,
    n_rows: usize,
    min_slice_size: usize,
    k_threshold: usize,
    suppressed_slices: usize,
    insights: &'a [crate::stats::SliceInsight],
}

/// Prompt asking for feature definitions for `task`.
pub fn build_definition_prompt(summary: &InsightSummary, schema: &[SchemaEntry], task: Task) -> Result<String> {
    if summary.insights.is_empty() {
        return Err(Error::Synthesis("insight summary has no exported slices".into()));
    }
    let mut p = String::new();
    writeln!(p, "phase: {PHASE_DEFINITION}\n").unwrap();
    section(
        &mut p,
        "ROLE",
        "You are a data scientist engineering features for a tabular classifier. You \
         see only the schema and privacy-filtered aggregate statistics below; no \
         individual records are available.",
    );
    section(&mut p, "TASK", &format!("task: {}\n{}", task.as_str(), task.framing()));
    section(&mut p, "SCHEMA", &schema_lines(schema));
    let insights = PromptInsights {
        target: &summary.target,
        n_rows: summary.n_rows,
        min_slice_size: summary.min_slice_size,
        k_threshold: summary.k_threshold,
        suppressed_slices: summary.suppressed_count,
        insights: &summary.insights,
    };
    section(
        &mut p,
        "INSIGHTS",
        &serde_json::to_string_pretty(&insights).expect("insights serialize"),
    );
    section(
        &mut p,
        "RESPONSE FORMAT",
        &format!(
            "Reply with a single JSON object and nothing else:\n\
             {{\"features\": [{{\"name\": \"snake_case_name\", \"source_columns\": [\"COLUMN\", ...], \
             \"logic_description\": \"what the feature computes and why\"}}]}}\n\
             Use only columns listed under SCHEMA. Propose at most {MAX_FEATURES} features with \
             distinct names."
        ),
    );
    Ok(p)
}

pub const GRAMMAR: &str = "\
expr     := or_expr | 'if' expr 'then' expr 'else' expr
or_expr  := and_expr ('or' and_expr)*
and_expr := not_expr ('and' not_expr)*
not_expr := 'not' not_expr | cmp
cmp      := sum (('==' | '!=' | '<' | '<=' | '>' | '>=') sum)? | sum 'in' '[' literal (',' literal)* ']'
sum      := product (('+' | '-') product)*
product  := unary ('*' unary)*
unary    := '-' unary | atom
atom     := number | 'string' | true | false | COLUMN | '(' expr ')'
          | safe_div(expr, expr) | clamp(expr, expr, expr) | log1p(expr) | is_missing(COLUMN)
Division is only available as safe_div, which yields 0 for a zero denominator.
Arithmetic applies to numeric values; categorical values support ==, != and in.
The result must be numeric or boolean (booleans become 1/0).";

/// Prompt asking for one expression per validated definition.
pub fn build_expression_prompt(defs: &[FeatureDefinition], schema: &[SchemaEntry], task: Task) -> Result<String> {
    if defs.is_empty() {
        return Err(Error::Synthesis("no feature definitions to express".into()));
    }
    if let Some(d) = defs.iter().find(|d| d.status != DefStatus::Validated) {
        return Err(Error::Synthesis(format!("definition {:?} is not validated", d.name)));
    }
    let dtypes: BTreeMap<&str, &SchemaEntry> = schema.iter().map(|c| (c.name.as_str(), c)).collect();
    let mut columns: Vec<&SchemaEntry> = Vec::new();
    for d in defs {
        for c in &d.source_columns {
            let entry = dtypes
                .get(c.as_str())
                .ok_or_else(|| Error::Synthesis(format!("unknown column {c:?}")))?;
            if !columns.iter().any(|e| e.name == *c) {
                columns.push(entry);
            }
        }
    }
    let mut p = String::new();
    writeln!(p, "phase: {PHASE_EXPRESSION}\ntask: {}\n", task.as_str()).unwrap();
    section(
        &mut p,
        "ROLE",
        "Translate each feature definition into one expression of the language below. \
         Expressions are evaluated row by row and may reference only the listed columns.",
    );
    section(&mut p, "GRAMMAR", GRAMMAR);
    let owned: Vec<SchemaEntry> = columns.into_iter().cloned().collect();
    section(&mut p, "COLUMNS", &schema_lines(&owned));
    let mut feats = String::new();
    for (i, d) in defs.iter().enumerate() {
        writeln!(
            feats,
            "{}. name: {}\n   source_columns: {}\n   logic: {}",
            i + 1,
            d.name,
            d.source_columns.join(", "),
            d.logic_description
        )
        .unwrap();
    }
    section(&mut p, "FEATURES", &feats);
    section(
        &mut p,
        "RESPONSE FORMAT",
        &format!(
            "Reply with a single JSON object and nothing else, one entry per feature in the \
             order above ({} entries):\n\
             {{\"expressions\": [{{\"name\": \"feature_name\", \"expression\": \"...\"}}]}}",
            defs.len()
        ),
    );
    Ok(p)
}

/// Appends a format-repair instruction after an unparseable reply.
pub fn repair_prompt(prompt: &str, problem: &str) -> String {
    format!(
        "{prompt}=== FORMAT REPAIR ===\nYour previous reply could not be used: {problem}\n\
         Reply again with only the JSON object described under RESPONSE FORMAT.\n"
    )
}

/// `phase:task` key of a prompt, used by the mock provider as a fallback.
pub fn phase_key(prompt: &str) -> Option<String> {
    let field = |name: &str| {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix(name).map(|v| v.trim().to_string()))
    };
    Some(format!("{}:{}", field("phase:")?, field("task:")?))
}
