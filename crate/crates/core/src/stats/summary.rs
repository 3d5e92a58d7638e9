//! Privacy-gated single-condition slice screen.
//!
//! Each category of a categorical column and each quantile range of a numeric
//! column forms a slice. Slices that fail the anonymity policy are suppressed
//! and contribute only to a count; surviving slices are tested against a binary
//! target and ranked. The resulting [`InsightSummary`] is the only
//! dataset-derived content that leaves the process.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::anonymity::{anonymity_check, AnonymityPolicy};
use super::binning::{bin_numeric, generalize, NumericRange};
use super::inference::{bh_fdr, cramers_v, point_biserial, Contingency2x2};
use crate::error::{Error, Result};
use crate::pairing::PairedDataset;
use crate::table::{ColumnData, Dtype, Table, Value};

pub const DEFAULT_N_BINS: usize = 10;
/// Significant digits kept on published bin boundaries.
pub const EDGE_DIGITS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SliceCondition {
    Equals { category: String },
    Range(NumericRange),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub feature: String,
    pub condition: SliceCondition,
}

impl SliceSpec {
    /// Rows of `table` satisfying the slice condition. Missing cells never
    /// match.
    pub fn mask(&self, table: &Table) -> Result<Vec<bool>> {
        let col = table
            .column(&self.feature)
            .ok_or_else(|| Error::Schema(format!("unknown slice column {:?}", self.feature)))?;
        Ok((0..table.n_rows()).map(|r| self.matches(col.value(r))).collect())
    }

    pub fn matches(&self, v: Value<'_>) -> bool {
        match (&self.condition, v) {
            (SliceCondition::Equals { category }, Value::Str(s)) => s == category,
            (SliceCondition::Equals { category }, Value::Bool(b)) => category == &b.to_string(),
            (SliceCondition::Range(r), Value::Num(x)) => r.contains(x),
            _ => false,
        }
    }

    pub fn describe(&self) -> String {
        match &self.condition {
            SliceCondition::Equals { category } => format!("{} == {:?}", self.feature, category),
            SliceCondition::Range(r) => match (r.lo, r.hi) {
                (None, None) => format!("{} is present", self.feature),
                (Some(lo), None) => format!("{} >= {lo}", self.feature),
                (None, Some(hi)) => format!("{} < {hi}", self.feature),
                (Some(lo), Some(hi)) => format!("{lo} <= {} < {hi}", self.feature),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceStats {
    pub chi2_stat: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub cramers_v: f64,
    /// Correlation of the target with the slice's numeric column; absent for
    /// categorical columns.
    pub point_biserial: Option<f64>,
    pub group_rate_in: f64,
    pub group_rate_out: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceInsight {
    pub slice: SliceSpec,
    pub n_in: usize,
    pub suppressed: bool,
    /// Always `None` for suppressed slices.
    pub stats: Option<SliceStats>,
}

impl SliceInsight {
    pub fn stats(&self) -> &SliceStats {
        self.stats.as_ref().expect("exported insights carry statistics")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub name: String,
    pub dtype: Dtype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsightSummary {
    pub target: String,
    pub fingerprint: String,
    pub n_rows: usize,
    pub min_slice_size: usize,
    pub k_threshold: usize,
    pub schema_context: Vec<SchemaEntry>,
    pub insights: Vec<SliceInsight>,
    pub suppressed_count: usize,
}

impl InsightSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Schema entries that may be shown outside the process: feature and
/// quasi-identifier columns only.
pub fn schema_context(table: &Table) -> Vec<SchemaEntry> {
    table
        .model_input_columns()
        .into_iter()
        .map(|c| SchemaEntry {
            name: c.name.clone(),
            dtype: c.dtype,
        })
        .collect()
}

/// One-way digest of the table contents and target, used to tie exported
/// summaries to the data they came from.
pub fn fingerprint(table: &Table, target: &[u8]) -> String {
    let mut h = Sha256::new();
    for c in table.schema() {
        h.update(c.name.as_bytes());
        h.update([0u8]);
    }
    for row in 0..table.n_rows() {
        for col in 0..table.schema().len() {
            h.update(table.value(col, row).render().as_bytes());
            h.update([0x1f]);
        }
        h.update([target.get(row).copied().unwrap_or(0)]);
    }
    hex::encode(h.finalize())
}

/// Enumerates candidate single-condition slices over model-input columns.
pub fn enumerate_slices(table: &Table, n_bins: usize) -> Result<Vec<SliceSpec>> {
    let mut slices = Vec::new();
    for c in table.model_input_columns() {
        // free text is never published, even as category labels
        if c.dtype == Dtype::Text {
            continue;
        }
        match table.column(&c.name).unwrap() {
            ColumnData::Text(v) => {
                let levels: BTreeSet<&str> = v.iter().flatten().map(String::as_str).collect();
                slices.extend(levels.into_iter().map(|l| SliceSpec {
                    feature: c.name.clone(),
                    condition: SliceCondition::Equals {
                        category: l.to_string(),
                    },
                }));
            }
            ColumnData::Boolean(v) => {
                let levels: BTreeSet<bool> = v.iter().flatten().copied().collect();
                slices.extend(levels.into_iter().map(|b| SliceSpec {
                    feature: c.name.clone(),
                    condition: SliceCondition::Equals {
                        category: b.to_string(),
                    },
                }));
            }
            ColumnData::Numeric(v) => {
                if v.iter().all(Option::is_none) {
                    continue;
                }
                let bins = bin_numeric(v, n_bins)?;
                slices.extend(generalize(&bins, EDGE_DIGITS).into_iter().map(|r| SliceSpec {
                    feature: c.name.clone(),
                    condition: SliceCondition::Range(r),
                }));
            }
        }
    }
    Ok(slices)
}

fn quasi_id_tuples(table: &Table, policy: &AnonymityPolicy) -> Result<Vec<Vec<String>>> {
    if policy.quasi_identifiers.is_empty() {
        return Ok(Vec::new());
    }
    let cols = policy
        .quasi_identifiers
        .iter()
        .map(|q| {
            table
                .column(q)
                .ok_or_else(|| Error::Schema(format!("unknown quasi-identifier column {q:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..table.n_rows())
        .map(|r| cols.iter().map(|c| c.value(r).render()).collect())
        .collect())
}

/// Builds the privacy-gated summary of `table` against a binary target.
pub fn summarize_table(
    table: &Table,
    target: &[u8],
    target_name: &str,
    policy: &AnonymityPolicy,
    n_bins: usize,
) -> Result<InsightSummary> {
    policy.validate()?;
    if target.len() != table.n_rows() {
        return Err(Error::InvalidInput(format!(
            "target has {} entries but table has {} rows",
            target.len(),
            table.n_rows()
        )));
    }
    if table.model_input_columns().is_empty() {
        return Err(Error::Schema("no feature columns to summarize".into()));
    }
    let slices = enumerate_slices(table, n_bins)?;
    let qi = quasi_id_tuples(table, policy)?;
    let total_pos = target.iter().filter(|&&y| y != 0).count();
    let n = table.n_rows();

    // one point-biserial value per numeric column
    let pb: std::collections::HashMap<&str, Option<f64>> = table
        .model_input_columns()
        .into_iter()
        .filter_map(|c| {
            table.numeric(&c.name).map(|v| {
                let r = point_biserial(target, v);
                (c.name.as_str(), (!r.degenerate).then_some(r.r))
            })
        })
        .collect();

    let mut evaluated: Vec<SliceInsight> = slices
        .into_par_iter()
        .map(|slice| {
            let mask = slice.mask(table)?;
            let n_in = mask.iter().filter(|&&m| m).count();
            if !anonymity_check(&mask, policy, &qi) {
                return Ok(SliceInsight {
                    slice,
                    n_in,
                    suppressed: true,
                    stats: None,
                });
            }
            let ct = Contingency2x2::from_vectors(&mask, target);
            let chi = ct.chi_square();
            let n_out = n - n_in;
            let pos_in = ct.a as usize;
            let stats = SliceStats {
                chi2_stat: chi.stat,
                p_value: chi.p_value,
                q_value: 1.0,
                cramers_v: if n > 0 { cramers_v(chi.stat, n as u64, 2, 2) } else { 0.0 },
                point_biserial: pb.get(slice.feature.as_str()).copied().flatten(),
                group_rate_in: ratio(pos_in, n_in),
                group_rate_out: ratio(total_pos - pos_in, n_out),
                degenerate: chi.degenerate,
            };
            Ok(SliceInsight {
                slice,
                n_in,
                suppressed: false,
                stats: Some(stats),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let suppressed_count = evaluated.iter().filter(|s| s.suppressed).count();
    evaluated.retain(|s| !s.suppressed);
    let p: Vec<f64> = evaluated.iter().map(|s| s.stats().p_value).collect();
    for (s, q) in evaluated.iter_mut().zip(bh_fdr(&p)) {
        s.stats.as_mut().unwrap().q_value = q;
    }
    // stable sort keeps enumeration order for exact ties
    evaluated.sort_by(|x, y| {
        let (a, b) = (x.stats(), y.stats());
        a.q_value
            .partial_cmp(&b.q_value)
            .unwrap_or(Ordering::Equal)
            .then(b.cramers_v.partial_cmp(&a.cramers_v).unwrap_or(Ordering::Equal))
    });

    Ok(InsightSummary {
        target: target_name.to_string(),
        fingerprint: fingerprint(table, target),
        n_rows: n,
        min_slice_size: policy.min_slice_size,
        k_threshold: policy.k_threshold,
        schema_context: schema_context(table),
        insights: evaluated,
        suppressed_count,
    })
}

/// Summary of the matched test rows of a paired dataset.
pub fn build_insight_summary(
    pair: &PairedDataset,
    target: &[u8],
    target_name: &str,
    policy: &AnonymityPolicy,
    n_bins: usize,
) -> Result<InsightSummary> {
    summarize_table(&pair.matched_test(), target, target_name, policy, n_bins)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
