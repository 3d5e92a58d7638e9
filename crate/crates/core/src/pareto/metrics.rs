use super::tree::WeightedTree;

/// Sum over leaves of weight mass times mean `p_C`.
pub fn m_signal(tree: &WeightedTree) -> f64 {
    tree.leaves
        .iter()
        .map(|l| {
            let s = l.stats();
            s.mass * s.mean_p_c
        })
        .sum()
}

/// Outcome of the noise-robustness score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseScore {
    pub value: f64,
    /// True when the correlation was undefined and the score defaulted to 1.
    pub degenerate: bool,
}

/// One minus the absolute correlation across leaves between mean `p_C` and
/// mean `p_N`. With `weighted`, leaves count in proportion to their mass.
pub fn m_noise(tree: &WeightedTree, weighted: bool) -> NoiseScore {
    let xs: Vec<f64> = tree.leaves.iter().map(|l| l.stats().mean_p_c).collect();
    let ys: Vec<f64> = tree.leaves.iter().map(|l| l.stats().mean_p_n).collect();
    let ws: Vec<f64> = if weighted {
        tree.leaves.iter().map(|l| l.stats().mass).collect()
    } else {
        vec![1.0; xs.len()]
    };
    match weighted_pearson(&xs, &ys, &ws) {
        Some(r) => NoiseScore {
            value: (1.0 - r.abs()).clamp(0.0, 1.0),
            degenerate: false,
        },
        None => NoiseScore {
            value: 1.0,
            degenerate: true,
        },
    }
}

/// Weighted Pearson correlation; `None` with fewer than two positively
/// weighted points or zero variance on either axis.
pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    let points = w.iter().filter(|&&w| w > 0.0).count();
    let total: f64 = w.iter().sum();
    if points < 2 || total <= 0.0 {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / total;
    let my = y.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / total;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    // relative guard against variances that are rounding residue
    let scale_x = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let scale_y = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if sxx <= 1e-24 * total * scale_x * scale_x || syy <= 1e-24 * total * scale_y * scale_y {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::tree::{Leaf, LeafStats};

    fn tree(leaves: &[(f64, f64, f64)]) -> WeightedTree {
        WeightedTree {
            feature_names: vec![],
            max_depth: 5,
            nodes: vec![],
            leaves: leaves
                .iter()
                .enumerate()
                .map(|(id, &(mass, c, n))| Leaf {
                    id,
                    class: 1,
                    class_mass: [0.0, mass],
                    rows: vec![],
                    path: vec![],
                    stats: Some(LeafStats {
                        mass,
                        mean_p_c: c,
                        mean_p_n: n,
                        p_c_sum: 0.0,
                    }),
                })
                .collect(),
        }
    }

    #[test]
    fn signal_examples() {
        assert_eq!(m_signal(&tree(&[(4.0, 0.5, 0.0)])), 2.0);
        assert_eq!(m_signal(&tree(&[(4.0, 0.0, 0.3), (1.0, 0.0, 0.1)])), 0.0);
        assert!((m_signal(&tree(&[(3.0, 0.9, 0.0), (2.0, 0.1, 0.0)])) - 2.9).abs() < 1e-12);
    }

    #[test]
    fn noise_examples() {
        let t = tree(&[(1.0, 0.1, 0.1), (1.0, 0.5, 0.5), (1.0, 0.9, 0.9)]);
        assert!(m_noise(&t, false).value.abs() < 1e-12);
        let t = tree(&[(1.0, 0.1, 0.3), (1.0, 0.5, 0.3)]);
        assert_eq!(m_noise(&t, false), NoiseScore { value: 1.0, degenerate: true });
        let t = tree(&[(1.0, 0.2, 0.7), (1.0, 0.8, 0.1)]);
        assert!(m_noise(&t, false).value.abs() < 1e-12);
        let t = tree(&[(1.0, 0.2, 0.7)]);
        assert_eq!(m_noise(&t, true).value, 1.0);
    }

    #[test]
    fn weighted_variant_matches_replication() {
        // weights (2, 1, 1) equal to duplicating the first point
        let r_w = weighted_pearson(&[0.1, 0.4, 0.9], &[0.3, 0.1, 0.8], &[2.0, 1.0, 1.0]).unwrap();
        let r_d = weighted_pearson(&[0.1, 0.1, 0.4, 0.9], &[0.3, 0.3, 0.1, 0.8], &[1.0; 4]).unwrap();
        assert!((r_w - r_d).abs() < 1e-12);
    }
}
