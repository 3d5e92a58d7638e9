use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sigmoid, FeatureMatrix, GbtConfig, GbtModel, Node, Tree, MODEL_FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Candidate {
    feature: usize,
    threshold: f64,
    missing_left: bool,
    gain: f64,
    left: (f64, f64),
    right: (f64, f64),
}

struct Presorted {
    /// Non-missing rows ordered by value, ties by row index.
    order: Vec<Vec<u32>>,
    missing: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(x: &FeatureMatrix) -> Self {
        let (order, missing) = (0..x.n_features())
            .into_par_iter()
            .map(|j| {
                let col = x.column(j);
                let (mut present, missing): (Vec<u32>, Vec<u32>) =
                    (0..x.n_rows() as u32).partition(|&r| !col[r as usize].is_nan());
                present.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                (present, missing)
            })
            .unzip();
        Self { order, missing }
    }
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    sorted: &'a Presorted,
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a GbtConfig,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2_lambda)
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.cfg.l2_lambda) * self.cfg.learning_rate
    }

    /// Best split of every active node on feature `j`.
    fn best_on_feature(&self, j: usize, node_of: &[i32], totals: &[(f64, f64)]) -> Vec<Option<Candidate>> {
        let k = totals.len();
        let col = self.x.column(j);
        let mut miss = vec![(0.0, 0.0); k];
        for &r in &self.sorted.missing[j] {
            let a = node_of[r as usize];
            if a >= 0 {
                miss[a as usize].0 += self.g[r as usize];
                miss[a as usize].1 += self.h[r as usize];
            }
        }
        let mut run = vec![(0.0, 0.0); k];
        let mut last: Vec<Option<f64>> = vec![None; k];
        let mut best: Vec<Option<Candidate>> = vec![None; k];
        let mch = self.cfg.min_child_hessian;
        for &r in &self.sorted.order[j] {
            let a = node_of[r as usize];
            if a < 0 {
                continue;
            }
            let a = a as usize;
            let v = col[r as usize];
            if let Some(pv) = last[a] {
                if v > pv {
                    let (gt, ht) = totals[a];
                    let parent = self.score(gt, ht);
                    let (gl, hl) = run[a];
                    let (mg, mh) = miss[a];
                    let mid = pv + (v - pv) / 2.0;
                    let threshold = if mid > pv { mid } else { v };
                    // missing rows to the right first; left only if strictly better
                    for missing_left in [false, true] {
                        let (lg, lh) = if missing_left { (gl + mg, hl + mh) } else { (gl, hl) };
                        let (rg, rh) = (gt - lg, ht - lh);
                        if lh < mch || rh < mch {
                            continue;
                        }
                        let gain = 0.5 * (self.score(lg, lh) + self.score(rg, rh) - parent);
                        if gain > 0.0 && best[a].is_none_or(|b| gain > b.gain) {
                            best[a] = Some(Candidate {
                                feature: j,
                                threshold,
                                missing_left,
                                gain,
                                left: (lg, lh),
                                right: (rg, rh),
                            });
                        }
                    }
                }
            }
            run[a].0 += self.g[r as usize];
            run[a].1 += self.h[r as usize];
            last[a] = Some(v);
        }
        best
    }

    fn grow(&self, rows: &[usize]) -> Tree {
        let n = self.x.n_rows();
        let mut node_of = vec![-1i32; n];
        let (mut g0, mut h0) = (0.0, 0.0);
        for &r in rows {
            node_of[r] = 0;
            g0 += self.g[r];
            h0 += self.h[r];
        }
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        // (node id, gradient sum, hessian sum) of nodes still open for splitting
        let mut active = vec![(0usize, g0, h0)];
        for _depth in 0..self.cfg.max_depth {
            if active.is_empty() {
                break;
            }
            let totals: Vec<(f64, f64)> = active.iter().map(|&(_, g, h)| (g, h)).collect();
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..self.x.n_features())
                .into_par_iter()
                .map(|j| self.best_on_feature(j, &node_of, &totals))
                .collect();
            let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
            for cands in per_feature {
                for (b, c) in best.iter_mut().zip(cands) {
                    if let Some(c) = c {
                        if b.is_none_or(|b| c.gain > b.gain) {
                            *b = Some(c);
                        }
                    }
                }
            }
            let mut next = Vec::new();
            // position in `next` of the left child of each split node
            let mut child_pos: Vec<Option<usize>> = vec![None; active.len()];
            for (a, &(id, g, h)) in active.iter().enumerate() {
                match best[a] {
                    None => nodes[id] = Node::Leaf { value: self.leaf_value(g, h) },
                    Some(c) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes[id] = Node::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            missing_left: c.missing_left,
                            left,
                            right: left + 1,
                            gain: c.gain,
                        };
                        child_pos[a] = Some(next.len());
                        next.push((left, c.left.0, c.left.1));
                        next.push((left + 1, c.right.0, c.right.1));
                    }
                }
            }
            for &r in rows {
                let a = node_of[r];
                if a < 0 {
                    continue;
                }
                node_of[r] = match (child_pos[a as usize], best[a as usize]) {
                    (Some(pos), Some(c)) => {
                        let v = self.x.get(r, c.feature);
                        let go_left = if v.is_nan() { c.missing_left } else { v < c.threshold };
                        (pos + usize::from(!go_left)) as i32
                    }
                    _ => -1,
                };
            }
            active = next;
        }
        for (id, g, h) in active {
            nodes[id] = Node::Leaf { value: self.leaf_value(g, h) };
        }
        Tree { nodes }
    }
}

fn log_loss(margin: &[f64], y: &[u8]) -> f64 {
    let s: f64 = margin
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - f64::from(y) * z
        })
        .sum();
    s / margin.len() as f64
}

/// Trains a binary classifier on `x` and labels `y`.
pub fn train_gbt(x: &FeatureMatrix, y: &[u8], config: &GbtConfig) -> Result<GbtModel> {
    config.validate()?;
    let n = x.n_rows();
    if n == 0 || y.len() != n {
        return Err(Error::Model(format!(
            "need matching non-empty inputs, got {n} rows and {} labels",
            y.len()
        )));
    }
    if x.n_features() == 0 {
        return Err(Error::Model("empty feature matrix".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Model("labels must be 0 or 1".into()));
    }
    if positives == 0 || positives == n {
        return Err(Error::Model("labels contain a single class".into()));
    }
    let mean = positives as f64 / n as f64;
    let base_score = (mean / (1.0 - mean)).ln();

    let sorted = Presorted::new(x);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut margin = vec![base_score; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut train_loss = vec![log_loss(&margin, y)];
    let all_rows: Vec<usize> = (0..n).collect();
    for _ in 0..config.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = p - f64::from(y[i]);
            h[i] = p * (1.0 - p);
        }
        let rows = if config.subsample < 1.0 {
            let k = ((n as f64 * config.subsample).round() as usize).max(1);
            let mut r = sample(&mut rng, n, k).into_vec();
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let tree = Grower {
            x,
            sorted: &sorted,
            g: &g,
            h: &h,
            cfg: config,
        }
        .grow(&rows);
        let next: Vec<f64> = margin
            .par_iter()
            .enumerate()
            .map(|(r, m)| m + tree.predict_row(x, r))
            .collect();
        let loss = log_loss(&next, y);
        // converged: the step no longer lowers the training loss beyond
        // rounding, so the round is dropped and boosting stops
        if loss >= *train_loss.last().unwrap() {
            break;
        }
        margin = next;
        train_loss.push(loss);
        trees.push(tree);
    }
    Ok(GbtModel {
        format_version: MODEL_FORMAT_VERSION,
        base_score,
        feature_names: x.names().to_vec(),
        trees,
        train_loss,
    })
}
