//! Key-based alignment of control and test tables and the surrogate shift
//! label derived from the target metric.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::table::{Role, Table};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Control and test tables aligned on their shared key column.
///
/// Matched rows follow control-table order. `surrogate[i]` is 1 when the
/// target metric of matched row `i` differs between the two tables.
#[derive(Clone, Debug)]
pub struct PairedDataset {
    pub control: Table,
    pub test: Table,
    pub control_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub surrogate: Vec<u8>,
    pub unmatched_control: Vec<String>,
    pub unmatched_test: Vec<String>,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingReport {
    pub matched: usize,
    pub shifted: usize,
    pub unmatched_control: usize,
    pub unmatched_test: usize,
    pub tolerance: f64,
}

impl PairedDataset {
    pub fn n_matched(&self) -> usize {
        self.control_rows.len()
    }

    pub fn keys(&self) -> Vec<String> {
        self.test_rows.iter().map(|&r| self.test.key(r)).collect()
    }

    /// Test-table rows restricted to matched keys, in matched order.
    pub fn matched_test(&self) -> Table {
        self.test.select_rows(&self.test_rows)
    }

    pub fn matched_control(&self) -> Table {
        self.control.select_rows(&self.control_rows)
    }

    pub fn report(&self) -> PairingReport {
        PairingReport {
            matched: self.n_matched(),
            shifted: self.surrogate.iter().map(|&y| y as usize).sum(),
            unmatched_control: self.unmatched_control.len(),
            unmatched_test: self.unmatched_test.len(),
            tolerance: self.tolerance,
        }
    }
}

/// Whether a metric changed between control and test.
///
/// The relative scale uses the larger magnitude of the two values, which keeps
/// the indicator symmetric under swapping the tables. A value present on one
/// side and missing on the other counts as a change.
pub fn metric_changed(control: Option<f64>, test: Option<f64>, tolerance: f64) -> bool {
    match (control, test) {
        (Some(c), Some(t)) => (t - c).abs() > tolerance * 1f64.max(c.abs()).max(t.abs()),
        (None, None) => false,
        _ => true,
    }
}

pub fn pair_tables(control: Table, test: Table, tolerance: f64) -> Result<PairedDataset> {
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(Error::InvalidInput(format!("tolerance {tolerance} must be >= 0")));
    }
    let key_name = control.key_column().name.clone();
    if test.key_column().name != key_name {
        return Err(Error::Schema(format!(
            "key columns differ: {:?} vs {:?}",
            key_name,
            test.key_column().name
        )));
    }
    let target_name = control.target_column().name.clone();
    if test.target_column().name != target_name {
        return Err(Error::Schema(format!(
            "target-metric columns differ: {:?} vs {:?}",
            target_name,
            test.target_column().name
        )));
    }
    // ground-truth columns are never consulted here: only the target metric
    debug_assert_eq!(
        control.column_schema(&target_name).map(|c| c.role),
        Some(Role::TargetMetric)
    );
    let c_metric = control.numeric(&target_name).expect("numeric target");
    let t_metric = test.numeric(&target_name).expect("numeric target");

    let mut control_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut surrogate = Vec::new();
    let mut unmatched_control = Vec::new();
    for c_row in 0..control.n_rows() {
        let key = control.key(c_row);
        match test.row_of_key(&key) {
            Some(t_row) => {
                control_rows.push(c_row);
                test_rows.push(t_row);
                surrogate.push(u8::from(metric_changed(
                    c_metric[c_row],
                    t_metric[t_row],
                    tolerance,
                )));
            }
            None => unmatched_control.push(key),
        }
    }
    let unmatched_test: Vec<String> = (0..test.n_rows())
        .map(|r| test.key(r))
        .filter(|k| control.row_of_key(k).is_none())
        .collect();
    if control_rows.is_empty() {
        return Err(Error::NoMatchedKeys);
    }
    if !unmatched_control.is_empty() || !unmatched_test.is_empty() {
        log::info!(
            "pairing left {} control and {} test keys unmatched",
            unmatched_control.len(),
            unmatched_test.len()
        );
    }
    Ok(PairedDataset {
        control,
        test,
        control_rows,
        test_rows,
        surrogate,
        unmatched_control,
        unmatched_test,
        tolerance,
    })
}
