//! Quantile binning of numeric columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open interval `[lo, hi)`, or closed `[lo, hi]` when `closed_hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub closed_hi: bool,
}

impl Bin {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.closed_hi && x <= self.hi))
    }
}

/// Bins of a numeric column.
///
/// With more distinct values than `n_bins`, edges are the sample quantiles at
/// `k / n_bins` (linear interpolation between order statistics, the R type-7
/// convention), deduplicated. With at most `n_bins` distinct values, each
/// distinct value starts its own bin. The last bin is closed.
pub fn bin_numeric(column: &[Option<f64>], n_bins: usize) -> Result<Vec<Bin>> {
    if n_bins == 0 {
        return Err(Error::InvalidInput("n_bins must be positive".into()));
    }
    let mut sorted: Vec<f64> = column.iter().flatten().copied().collect();
    if sorted.is_empty() {
        return Err(Error::InvalidInput("cannot bin a column with no values".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    if distinct.len() <= n_bins {
        let last = *distinct.last().unwrap();
        let mut bins: Vec<Bin> = distinct
            .windows(2)
            .map(|w| Bin {
                lo: w[0],
                hi: w[1],
                closed_hi: false,
            })
            .collect();
        bins.push(Bin {
            lo: last,
            hi: last,
            closed_hi: true,
        });
        return Ok(bins);
    }

    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64))
        .collect();
    edges.dedup();
    let n = edges.len() - 1;
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| Bin {
            lo: w[0],
            hi: w[1],
            closed_hi: i + 1 == n,
        })
        .collect())
}

/// Sorted, deduplicated boundary values of a binning.
pub fn edges(bins: &[Bin]) -> Vec<f64> {
    let mut e: Vec<f64> = bins.iter().flat_map(|b| [b.lo, b.hi]).collect();
    e.sort_by(f64::total_cmp);
    e.dedup();
    e
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A published numeric range. Outer ends are open so that the minimum and
/// maximum of a column are never revealed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    /// Inclusive lower bound; `None` means unbounded.
    pub lo: Option<f64>,
    /// Exclusive upper bound; `None` means unbounded.
    pub hi: Option<f64>,
}

impl NumericRange {
    pub fn contains(&self, x: f64) -> bool {
        self.lo.is_none_or(|lo| x >= lo) && self.hi.is_none_or(|hi| x < hi)
    }
}

/// Rounds to `digits` significant digits.
pub fn round_significant(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits as i32 - 1 - magnitude);
    let r = (x * scale).round() / scale;
    // re-parse the shortest decimal form so that printing is stable
    format!("{r:.*}", (digits as i32 - 1 - magnitude).max(0) as usize)
        .parse()
        .unwrap_or(r)
}

/// Converts exact bins into publishable ranges: interior boundaries are
/// rounded to `digits` significant digits, outer ends are opened, and bins
/// collapsed by rounding are merged.
pub fn generalize(bins: &[Bin], digits: u32) -> Vec<NumericRange> {
    let mut cuts: Vec<f64> = bins
        .iter()
        .skip(1)
        .map(|b| round_significant(b.lo, digits))
        .collect();
    cuts.dedup();
    if cuts.is_empty() {
        return vec![NumericRange { lo: None, hi: None }];
    }
    let mut out = Vec::with_capacity(cuts.len() + 1);
    out.push(NumericRange {
        lo: None,
        hi: Some(cuts[0]),
    });
    for w in cuts.windows(2) {
        out.push(NumericRange {
            lo: Some(w[0]),
            hi: Some(w[1]),
        });
    }
    out.push(NumericRange {
        lo: Some(*cuts.last().unwrap()),
        hi: None,
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn constant_column_single_bin() {
        let bins = bin_numeric(&col(&[5.0, 5.0, 5.0, 5.0]), 10).unwrap();
        assert_eq!(
            bins,
            vec![Bin {
                lo: 5.0,
                hi: 5.0,
                closed_hi: true
            }]
        );
        assert!(bins[0].contains(5.0));
    }

    #[test]
    fn quartiles_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let bins = bin_numeric(&col(&v), 4).unwrap();
        // oracle: type-7 quantile h = 99 q on sorted 1..100 gives 1 + 99 q
        let expected: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|q| 1.0 + 99.0 * q)
            .collect();
        assert_eq!(edges(&bins), expected);
        assert_eq!(expected, vec![1.0, 25.75, 50.5, 75.25, 100.0]);
        assert_eq!(bins.len(), 4);
        let counts: Vec<usize> = bins
            .iter()
            .map(|b| v.iter().filter(|&&x| b.contains(x)).count())
            .collect();
        assert_eq!(counts.iter().sum::<usize>(), 100);
    }

    #[test]
    fn few_distinct_values() {
        let bins = bin_numeric(&col(&[1.0, 2.0]), 10).unwrap();
        assert_eq!(bins.len(), 2);
        assert!(bins[0].contains(1.0) && !bins[0].contains(2.0));
        assert!(bins[1].contains(2.0));
    }

    #[test]
    fn all_missing_is_error() {
        assert!(bin_numeric(&[None, None], 4).is_err());
    }

    #[test]
    fn edges_strictly_increasing_with_ties() {
        let mut v = vec![0.0; 60];
        v.extend((0..40).map(f64::from));
        let bins = bin_numeric(&col(&v), 10).unwrap();
        let e = edges(&bins);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert!(bins.len() <= 10);
        for x in &v {
            assert_eq!(bins.iter().filter(|b| b.contains(*x)).count(), 1);
        }
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(151_234.5, 3), 151_000.0);
        assert_eq!(round_significant(25.75, 3), 25.8);
        assert_eq!(round_significant(0.012345, 3), 0.0123);
        assert_eq!(round_significant(-7.777, 2), -7.8);
    }

    #[test]
    fn generalized_ranges_cover_line() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let r = generalize(&bin_numeric(&col(&v), 4).unwrap(), 3);
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].lo, None);
        assert_eq!(r[3].hi, None);
        for x in [-1e9, 0.0, 25.8, 50.0, 1e9] {
            assert_eq!(r.iter().filter(|b| b.contains(x)).count(), 1);
        }
    }
}
