use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slice-level disclosure safeguards applied before any statistic is exported.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymityPolicy {
    pub min_slice_size: usize,
    pub k_threshold: usize,
    #[serde(default)]
    pub quasi_identifiers: Vec<String>,
}

impl AnonymityPolicy {
    pub fn new(
        min_slice_size: usize,
        k_threshold: usize,
        quasi_identifiers: Vec<String>,
    ) -> Result<Self> {
        let p = Self {
            min_slice_size,
            k_threshold,
            quasi_identifiers,
        };
        p.validate()?;
        Ok(p)
    }

    /// Size-adaptive defaults: `min_slice_size = max(2, ceil(0.001 n))` and
    /// `k_threshold = max(2, min_slice_size)`.
    pub fn adaptive(n_rows: usize, quasi_identifiers: Vec<String>) -> Self {
        let min_slice_size = 2usize.max((n_rows as f64 * 0.001).ceil() as usize);
        Self {
            min_slice_size,
            k_threshold: 2usize.max(min_slice_size),
            quasi_identifiers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_slice_size < 2 || self.k_threshold < 2 {
            return Err(Error::InvalidInput(format!(
                "anonymity policy needs min_slice_size >= 2 and k_threshold >= 2 (got {} and {})",
                self.min_slice_size, self.k_threshold
            )));
        }
        Ok(())
    }
}

/// Whether a slice may be exported.
///
/// Passes iff the slice holds at least `min_slice_size` rows and, when the
/// policy names quasi-identifiers, every quasi-identifier tuple occurring in
/// the slice occurs at least `k_threshold` times within it. `quasi_id_values`
/// holds one tuple per row and is ignored when the policy has none.
pub fn anonymity_check(
    slice_mask: &[bool],
    policy: &AnonymityPolicy,
    quasi_id_values: &[Vec<String>],
) -> bool {
    let size = slice_mask.iter().filter(|&&m| m).count();
    if size < policy.min_slice_size {
        return false;
    }
    if policy.quasi_identifiers.is_empty() {
        return true;
    }
    assert_eq!(
        slice_mask.len(),
        quasi_id_values.len(),
        "quasi-identifier tuples must cover every row"
    );
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    for (tuple, _) in quasi_id_values
        .iter()
        .zip(slice_mask)
        .filter(|(_, &inside)| inside)
    {
        *counts.entry(tuple.as_slice()).or_default() += 1;
    }
    counts.values().all(|&c| c >= policy.k_threshold)
}
