use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::tree::WeightedTree;
use crate::dsl::{column_types, compile};
use crate::error::{Error, Result};
use crate::table::Table;

/// Rule text used when no leaf was selected.
pub const EMPTY_SEGMENT_RULE: &str = "false";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRule {
    pub leaf: usize,
    pub rule: String,
    pub mean_p_c: f64,
    pub n_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(skip)]
    pub mask: Vec<bool>,
    pub rules: Vec<SegmentRule>,
    pub covered_mass: f64,
    pub total_mass: f64,
    pub tau: f64,
    pub n_rows: usize,
    /// True when the tree had no class-1 leaf.
    pub empty: bool,
}

impl Segment {
    /// Disjunction of the selected leaf rules.
    pub fn predicate(&self) -> String {
        if self.rules.is_empty() {
            EMPTY_SEGMENT_RULE.into()
        } else {
            self.rules
                .iter()
                .map(|r| format!("({})", r.rule))
                .collect::<Vec<_>>()
                .join(" or ")
        }
    }

    /// Re-evaluates the rules on `table` rows.
    pub fn apply(&self, table: &Table) -> Result<Vec<bool>> {
        let types = column_types(table);
        let mut mask = vec![false; table.n_rows()];
        for r in &self.rules {
            let m = compile(&r.rule, &types, None)?.eval_mask(table)?;
            for (a, b) in mask.iter_mut().zip(m) {
                *a |= b;
            }
        }
        Ok(mask)
    }
}

/// Selects class-1 leaves in order of decreasing mean `p_C` (ties: larger
/// mass, then smaller id) until their rows hold at least `tau` of the total
/// `p_C` mass.
pub fn mass_greedy(tree: &WeightedTree, p_c: &[f64], tau: f64) -> Result<Segment> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidInput(format!("tau must be in (0, 1], got {tau}")));
    }
    let total: f64 = p_c.iter().sum();
    let target = tau * total;
    let mut candidates: Vec<_> = tree.leaves.iter().filter(|l| l.class == 1).collect();
    candidates.sort_by(|a, b| {
        let (sa, sb) = (a.stats(), b.stats());
        sb.mean_p_c
            .partial_cmp(&sa.mean_p_c)
            .unwrap_or(Ordering::Equal)
            .then(sb.mass.partial_cmp(&sa.mass).unwrap_or(Ordering::Equal))
            .then(a.id.cmp(&b.id))
    });
    let empty = candidates.is_empty();
    let mut mask = vec![false; p_c.len()];
    let mut covered = 0.0;
    let mut rules = Vec::new();
    for leaf in candidates {
        if covered >= target {
            break;
        }
        for &r in &leaf.rows {
            mask[r] = true;
            covered += p_c[r];
        }
        rules.push(SegmentRule {
            leaf: leaf.id,
            rule: leaf.rule(),
            mean_p_c: leaf.stats().mean_p_c,
            n_rows: leaf.rows.len(),
        });
    }
    Ok(Segment {
        n_rows: mask.iter().filter(|&&m| m).count(),
        mask,
        rules,
        covered_mass: covered,
        total_mass: total,
        tau,
        empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::tree::{Leaf, LeafStats};

    fn leaf(id: usize, class: u8, rows: Vec<usize>, mean: f64, mass: f64) -> Leaf {
        Leaf {
            id,
            class,
            class_mass: [0.0, 0.0],
            rows,
            path: vec![],
            stats: Some(LeafStats {
                mass,
                mean_p_c: mean,
                mean_p_n: 0.0,
                p_c_sum: 0.0,
            }),
        }
    }

    fn tree(leaves: Vec<Leaf>) -> WeightedTree {
        WeightedTree {
            feature_names: vec![],
            max_depth: 5,
            nodes: vec![],
            leaves,
        }
    }

    #[test]
    fn accumulates_in_order_and_stops() {
        // mass shares of total p_C: A 0.5, B 0.3, C 0.2
        let p_c = vec![0.25, 0.25, 0.15, 0.15, 0.1, 0.1];
        let t = tree(vec![
            leaf(0, 1, vec![4, 5], 0.2, 1.0),
            leaf(1, 1, vec![0, 1], 0.9, 1.0),
            leaf(2, 1, vec![2, 3], 0.6, 1.0),
        ]);
        let s = mass_greedy(&t, &p_c, 0.7).unwrap();
        assert_eq!(s.rules.iter().map(|r| r.leaf).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.mask, vec![true, true, true, true, false, false]);
        assert!(s.covered_mass >= 0.7 * s.total_mass);
        let all = mass_greedy(&t, &p_c, 1.0).unwrap();
        assert_eq!(all.rules.len(), 3);
    }

    #[test]
    fn single_leaf_with_all_mass() {
        let t = tree(vec![leaf(0, 0, vec![0], 0.0, 1.0), leaf(1, 1, vec![1, 2], 0.8, 2.0)]);
        let s = mass_greedy(&t, &[0.0, 0.5, 0.5], 0.5).unwrap();
        assert_eq!(s.rules.len(), 1);
        assert!(!s.empty);
    }

    #[test]
    fn no_class_one_leaves() {
        let t = tree(vec![leaf(0, 0, vec![0, 1], 0.1, 2.0)]);
        let s = mass_greedy(&t, &[0.1, 0.1], 0.5).unwrap();
        assert!(s.empty && s.rules.is_empty());
        assert_eq!(s.predicate(), EMPTY_SEGMENT_RULE);
        assert!(mass_greedy(&t, &[0.1, 0.1], 0.0).is_err());
    }
}
