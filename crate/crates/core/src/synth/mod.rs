//! Feature synthesis: ask a language model for feature definitions given only
//! the schema and the privacy-gated insight summary, then for one expression
//! per definition, and materialize the compiled expressions as columns.

pub mod definitions;
pub mod prompt;
pub mod provider;

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dsl::DslExpression;
use crate::error::{Error, Result};
use crate::gbt::FeatureMatrix;
use crate::stats::{InsightSummary, SchemaEntry};
use crate::table::Table;

pub use definitions::{
    compile_expression, evaluate_features, parse_expressions, parse_validate_definitions, DefStatus,
    FeatureDefinition, MISSING_SUFFIX,
};
pub use prompt::{build_definition_prompt, build_expression_prompt, Task, MAX_FEATURES};
pub use provider::{
    call_provider, AuditEntry, AuditLog, HttpProvider, MockProvider, Provider, ProviderResponse, RetryPolicy,
};

/// Outcome of one two-phase synthesis run.
#[derive(Clone, Debug)]
pub struct SynthesisRun {
    pub task: Task,
    pub model: String,
    /// Every validated definition, with its final status.
    pub definitions: Vec<FeatureDefinition>,
    pub expressions: Vec<(String, DslExpression)>,
}

#[derive(Serialize, Deserialize)]
struct DefinitionsDocument {
    task: Task,
    model: String,
    definitions: Vec<FeatureDefinition>,
}

impl SynthesisRun {
    pub fn features(&self, table: &Table) -> Result<FeatureMatrix> {
        evaluate_features(table, &self.expressions)
    }

    pub fn definitions_json(&self) -> String {
        let doc = DefinitionsDocument {
            task: self.task,
            model: self.model.clone(),
            definitions: self.definitions.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("definitions serialize")
    }

    /// Rebuilds a run from a stored definitions document.
    pub fn from_definitions_json(text: &str, schema: &[SchemaEntry]) -> Result<Self> {
        let doc: DefinitionsDocument = serde_json::from_str(text)?;
        let mut expressions = Vec::new();
        for d in doc.definitions.iter().filter(|d| d.status == DefStatus::ExpressionReady) {
            let mut probe = d.clone();
            probe.status = DefStatus::Validated;
            let text = d.expression.as_deref().unwrap_or_default();
            expressions.push((d.name.clone(), compile_expression(&mut probe, text, schema)?));
        }
        Ok(Self {
            task: doc.task,
            model: doc.model,
            definitions: doc.definitions,
            expressions,
        })
    }

    pub fn save_definitions(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.definitions_json()).map_err(|e| Error::io(path, e))
    }
}

/// Sends `prompt` and hands the payload to `accept`; an unparseable reply or a
/// rejected payload shape gets one retry with a format-repair instruction.
fn ask<T>(
    provider: &dyn Provider,
    prompt: &str,
    retry: &RetryPolicy,
    audit: &mut AuditLog,
    accept: impl Fn(&ProviderResponse) -> Result<T>,
) -> Result<T> {
    let problem = match call_provider(provider, prompt, retry, audit)? {
        Ok(resp) => match accept(&resp) {
            Ok(v) => return Ok(v),
            Err(Error::Synthesis(m)) => m,
            Err(e) => return Err(e),
        },
        Err(provider::CallError::Parse { message, .. }) => message,
        Err(e) => return Err(e.into()),
    };
    warn!("provider reply unusable ({problem}); retrying with a format repair");
    let repaired = prompt::repair_prompt(prompt, &problem);
    match call_provider(provider, &repaired, retry, audit)? {
        Ok(resp) => accept(&resp),
        Err(e) => Err(e.into()),
    }
}

/// Runs both synthesis phases for `task`. Definitions whose expression fails
/// to compile are kept with status failed and excluded from the features; it
/// is an error when none compiles.
pub fn run_synthesis(
    provider: &dyn Provider,
    summary: &InsightSummary,
    schema: &[SchemaEntry],
    task: Task,
    retry: &RetryPolicy,
    audit: &mut AuditLog,
) -> Result<SynthesisRun> {
    let def_prompt = build_definition_prompt(summary, schema, task)?;
    let mut defs = ask(provider, &def_prompt, retry, audit, |r| parse_validate_definitions(r, schema))?;
    info!("{}: {} validated feature definitions", task.as_str(), defs.len());

    let expr_prompt = build_expression_prompt(&defs, schema, task)?;
    let texts = ask(provider, &expr_prompt, retry, audit, |r| {
        let t = parse_expressions(r)?;
        if t.is_empty() {
            return Err(Error::Synthesis("no expressions in response".into()));
        }
        Ok(t)
    })?;

    let mut expressions = Vec::new();
    for d in &mut defs {
        match texts.get(&d.name) {
            Some(text) => match compile_expression(d, text, schema) {
                Ok(e) => expressions.push((d.name.clone(), e)),
                Err(e) => warn!("feature {:?} excluded: {e}", d.name),
            },
            None => {
                warn!("feature {:?} excluded: no expression returned", d.name);
                d.status = DefStatus::Failed;
            }
        }
    }
    if expressions.is_empty() {
        return Err(Error::Synthesis(format!(
            "no {} feature expression compiled",
            task.as_str()
        )));
    }
    Ok(SynthesisRun {
        task,
        model: provider.model().to_string(),
        definitions: defs,
        expressions,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::stats::{SliceCondition, SliceInsight, SliceSpec, SliceStats};
    use crate::table::Dtype;

    fn schema() -> Vec<SchemaEntry> {
        vec![
            SchemaEntry {
                name: "AGE".into(),
                dtype: Dtype::Numeric,
            },
            SchemaEntry {
                name: "INCOME".into(),
                dtype: Dtype::Numeric,
            },
        ]
    }

    fn summary() -> InsightSummary {
        InsightSummary {
            target: "y".into(),
            fingerprint: "f".into(),
            n_rows: 10,
            min_slice_size: 2,
            k_threshold: 2,
            schema_context: schema(),
            insights: vec![SliceInsight {
                slice: SliceSpec {
                    feature: "AGE".into(),
                    condition: SliceCondition::Range(crate::stats::NumericRange {
                        lo: Some(60.0),
                        hi: None,
                    }),
                },
                n_in: 5,
                suppressed: false,
                stats: Some(SliceStats {
                    chi2_stat: 4.0,
                    p_value: 0.05,
                    q_value: 0.05,
                    cramers_v: 0.6,
                    point_biserial: Some(0.5),
                    group_rate_in: 0.8,
                    group_rate_out: 0.2,
                    degenerate: false,
                }),
            }],
            suppressed_count: 0,
        }
    }

    fn mock(entries: &[(&str, &str)]) -> MockProvider {
        MockProvider::new(entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<BTreeMap<_, _>>())
    }

    const FAST: RetryPolicy = RetryPolicy {
        max_retries: 0,
        base_delay_ms: 0,
    };

    #[test]
    fn two_phase_run_with_one_failing_expression() {
        let p = mock(&[
            (
                "definition:intervention",
                r#"{"features": [
                    {"name": "old", "source_columns": ["AGE"], "logic_description": "age over 60"},
                    {"name": "ratio", "source_columns": ["INCOME", "AGE"], "logic_description": "income per year"}
                ]}"#,
            ),
            (
                "expression:intervention",
                r#"{"expressions": [
                    {"name": "old", "expression": "AGE >= 60"},
                    {"name": "ratio", "expression": "INCOME / AGE"}
                ]}"#,
            ),
        ]);
        let mut audit = AuditLog::in_memory();
        let run = run_synthesis(&p, &summary(), &schema(), Task::Intervention, &FAST, &mut audit).unwrap();
        assert_eq!(run.expressions.len(), 1);
        assert_eq!(run.definitions[1].status, DefStatus::Failed);
        assert_eq!(audit.entries().len(), 4);
        let back = SynthesisRun::from_definitions_json(&run.definitions_json(), &schema()).unwrap();
        assert_eq!(back.expressions.len(), 1);
        assert_eq!(back.definitions, run.definitions);
    }

    #[test]
    fn format_repair_retry_then_error() {
        let def_prompt = build_definition_prompt(&summary(), &schema(), Task::Noise).unwrap();
        let repaired = prompt::repair_prompt(&def_prompt, "no JSON object in response");
        let p = mock(&[
            ("definition:noise", "I cannot answer in JSON"),
            (
                &provider::prompt_hash(&repaired),
                r#"{"features": [{"name": "m", "source_columns": ["INCOME"]}]}"#,
            ),
            ("expression:noise", r#"{"expressions": [{"name": "m", "expression": "is_missing(INCOME)"}]}"#),
        ]);
        let mut audit = AuditLog::in_memory();
        let run = run_synthesis(&p, &summary(), &schema(), Task::Noise, &FAST, &mut audit).unwrap();
        assert_eq!(run.expressions[0].0, "m");

        let p = mock(&[("definition:noise", "still not json")]);
        let r = run_synthesis(&p, &summary(), &schema(), Task::Noise, &FAST, &mut AuditLog::in_memory());
        assert!(matches!(r, Err(Error::Provider(_))));
    }

    #[test]
    fn all_expressions_failing_is_error() {
        let p = mock(&[
            ("definition:noise", r#"{"features": [{"name": "m", "source_columns": ["INCOME"]}]}"#),
            ("expression:noise", r#"{"expressions": [{"name": "m", "expression": "AGE"}]}"#),
        ]);
        let r = run_synthesis(&p, &summary(), &schema(), Task::Noise, &FAST, &mut AuditLog::in_memory());
        assert!(matches!(r, Err(Error::Synthesis(_))));
    }
}
