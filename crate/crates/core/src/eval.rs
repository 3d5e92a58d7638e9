//! Scoring of a predicted segment against per-row ground truth, and the
//! statistical-screen baseline segment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bench::NOISE_PREFIX;
use crate::error::{Error, Result};
use crate::stats::InsightSummary;
use crate::table::Table;

pub const DEFAULT_Q_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MAX_SLICES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the ground truth is empty; recall and F1 are then reported as 0.
    pub recall_defined: bool,
    pub segment_size: usize,
    pub truth_size: usize,
    pub overlap: usize,
    /// Segment rows carrying a ground-truth noise flag.
    pub contamination: usize,
    /// Segment rows per noise mechanism (a row can count for several).
    pub contamination_by_mechanism: BTreeMap<String, usize>,
}

/// Precision, recall and F1 of `mask` against `truth`.
pub fn score_segment(mask: &[bool], truth: &[bool]) -> Result<EvaluationReport> {
    if mask.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "mask has {} rows but truth has {}",
            mask.len(),
            truth.len()
        )));
    }
    let segment_size = mask.iter().filter(|&&m| m).count();
    let truth_size = truth.iter().filter(|&&t| t).count();
    let overlap = mask.iter().zip(truth).filter(|(&m, &t)| m && t).count();
    let precision = if segment_size > 0 { overlap as f64 / segment_size as f64 } else { 0.0 };
    let recall = if truth_size > 0 { overlap as f64 / truth_size as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvaluationReport {
        precision,
        recall,
        f1,
        recall_defined: truth_size > 0,
        segment_size,
        truth_size,
        overlap,
        contamination: 0,
        contamination_by_mechanism: BTreeMap::new(),
    })
}

/// [`score_segment`] plus noise contamination. `mechanisms` holds the ground
/// truth labels per row; only noise labels are counted.
pub fn score_with_noise(
    mask: &[bool],
    truth: &[bool],
    noise: &[bool],
    mechanisms: &[Vec<String>],
) -> Result<EvaluationReport> {
    if noise.len() != mask.len() || mechanisms.len() != mask.len() {
        return Err(Error::InvalidInput("noise flags must cover every row".into()));
    }
    let mut report = score_segment(mask, truth)?;
    for r in (0..mask.len()).filter(|&r| mask[r] && noise[r]) {
        report.contamination += 1;
        for m in &mechanisms[r] {
            if let Some(name) = m.strip_prefix(NOISE_PREFIX) {
                *report.contamination_by_mechanism.entry(name.to_string()).or_default() += 1;
            }
        }
    }
    Ok(report)
}

impl EvaluationReport {
    pub fn contamination_rate(&self) -> f64 {
        if self.segment_size == 0 {
            0.0
        } else {
            self.contamination as f64 / self.segment_size as f64
        }
    }
}

/// Renders named reports as an aligned text table, one method per row.
pub fn render_table(rows: &[(&str, &EvaluationReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>6}  {:>6}  {:>8}  {:>6}  {:>13}",
        "method", "precision", "recall", "f1", "segment", "truth", "contamination"
    );
    for (name, r) in rows {
        let recall = if r.recall_defined { format!("{:.3}", r.recall) } else { "n/a".into() };
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>6}  {:>6.3}  {:>8}  {:>6}  {:>13}",
            name, r.precision, recall, r.f1, r.segment_size, r.truth_size, r.contamination
        );
    }
    out
}

/// One slice taken into the baseline segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSlice {
    pub description: String,
    pub q_value: f64,
    pub cramers_v: f64,
    pub n_in: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSegment {
    pub slices: Vec<BaselineSlice>,
    #[serde(skip)]
    pub mask: Vec<bool>,
    pub n_rows: usize,
}

/// Union of the top exported slices of `summary` with `q <= q_threshold`.
///
/// Only non-suppressed insights are read, so the baseline sees exactly what
/// the feature-synthesis step sees. Insights are ranked by ascending q, then
/// descending Cramér's V. `table` must be the table the summary was built on.
pub fn stats_screen_baseline(
    summary: &InsightSummary,
    table: &Table,
    q_threshold: f64,
    max_slices: usize,
) -> Result<BaselineSegment> {
    if !(0.0..=1.0).contains(&q_threshold) {
        return Err(Error::InvalidInput(format!("q threshold {q_threshold} outside [0, 1]")));
    }
    if summary.n_rows != table.n_rows() {
        return Err(Error::InvalidInput("summary and table disagree on row count".into()));
    }
    let mut ranked: Vec<_> = summary
        .insights
        .iter()
        .filter(|i| !i.suppressed && i.stats.as_ref().is_some_and(|s| !s.degenerate && s.q_value <= q_threshold))
        .collect();
    ranked.sort_by(|a, b| {
        let (x, y) = (a.stats(), b.stats());
        x.q_value
            .total_cmp(&y.q_value)
            .then(y.cramers_v.total_cmp(&x.cramers_v))
    });
    ranked.truncate(max_slices);
    let mut mask = vec![false; table.n_rows()];
    let mut slices = Vec::new();
    for insight in ranked {
        for (m, s) in mask.iter_mut().zip(insight.slice.mask(table)?) {
            *m |= s;
        }
        slices.push(BaselineSlice {
            description: insight.slice.describe(),
            q_value: insight.stats().q_value,
            cramers_v: insight.stats().cramers_v,
            n_in: insight.n_in,
        });
    }
    Ok(BaselineSegment {
        n_rows: mask.iter().filter(|&&m| m).count(),
        slices,
        mask,
    })
}
