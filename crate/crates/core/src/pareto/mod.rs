//! Weighted decision-tree search over the noise penalty `alpha`.
//!
//! For each `alpha` on a grid, rows are weighted by
//! `p_C / (p_C + alpha p_N + 1e-9)` and a shallow tree is fit to the
//! surrogate shift label. Each tree is scored by its signal mass and by how
//! weakly its leaf-level `p_C` and `p_N` means are correlated; the knee of the
//! resulting front picks `alpha*`, and the final segment gathers the most
//! confident class-1 leaves of that tree.

mod greedy;
mod knee;
mod metrics;
mod tree;
mod weights;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use greedy::{mass_greedy, Segment, SegmentRule, EMPTY_SEGMENT_RULE};
pub use knee::{knee_point, nondominated, KNEE_TIE_TOLERANCE};
pub use metrics::{m_noise, m_signal, weighted_pearson, NoiseScore};
pub use tree::{
    fit_weighted_tree, ClassWeights, Condition, FitParams, Leaf, LeafStats, SplitRule, TreeColumn, TreeData,
    TreeNode, WeightedTree,
};
pub use weights::{compute_weights, weight, WEIGHT_EPSILON};

/// Integers 2 through 10.
pub fn default_alpha_grid() -> Vec<f64> {
    (2..=10).map(f64::from).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub m_signal: f64,
    pub m_noise: f64,
    /// The correlation was undefined and `m_noise` defaulted to 1.
    pub noise_degenerate: bool,
    pub n_leaves: usize,
    pub nondominated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub points: Vec<ParetoPoint>,
    pub best: usize,
    pub tree: WeightedTree,
    pub weights: Vec<f64>,
}

impl SearchResult {
    pub fn alpha_star(&self) -> f64 {
        self.points[self.best].alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    pub fit: FitParams,
    /// Weight leaves by mass in the noise correlation.
    pub weighted_noise_correlation: bool,
}

/// Fits one tree per grid value (in parallel), scores them and returns the
/// knee tree together with every scored point.
pub fn weighted_tree_search(
    x: &TreeData,
    y_tilde: &[u8],
    p_c: &[f64],
    p_n: &[f64],
    grid: &[f64],
    params: &SearchParams,
) -> Result<SearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    if p_c.len() != x.n_rows || p_n.len() != x.n_rows {
        return Err(Error::InvalidInput("probability vectors must cover every row".into()));
    }
    let fitted = grid
        .par_iter()
        .map(|&alpha| {
            let w = compute_weights(p_c, p_n, alpha)?;
            let mut tree = fit_weighted_tree(x, y_tilde, &w, &params.fit)?;
            tree.annotate(&w, p_c, p_n);
            Ok((alpha, tree, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points: Vec<ParetoPoint> = fitted
        .iter()
        .map(|(alpha, tree, _)| {
            let noise = m_noise(tree, params.weighted_noise_correlation);
            ParetoPoint {
                alpha: *alpha,
                m_signal: m_signal(tree),
                m_noise: noise.value,
                noise_degenerate: noise.degenerate,
                n_leaves: tree.leaves.len(),
                nondominated: false,
            }
        })
        .collect();
    let coords: Vec<(f64, f64)> = points.iter().map(|p| (p.m_signal, p.m_noise)).collect();
    for i in nondominated(&coords) {
        points[i].nondominated = true;
    }
    let triples: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.alpha, p.m_signal, p.m_noise)).collect();
    let best = knee_point(&triples).expect("grid is non-empty");
    let (_, tree, weights) = fitted.into_iter().nth(best).unwrap();
    Ok(SearchResult {
        points,
        best,
        tree,
        weights,
    })
}
