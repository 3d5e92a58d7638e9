//! Gradient-boosted trees for binary classification.
//!
//! Newton boosting on the logistic loss with level-wise exact greedy split
//! search over presorted features. Each split routes missing values in the
//! direction that maximizes gain on the training rows.

mod matrix;
mod train;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use matrix::{encode_columns, FeatureMatrix};
pub use train::train_gbt;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn default_n_rounds() -> usize {
    200
}
fn default_max_depth() -> usize {
    6
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtConfig {
    /// Upper bound on boosting rounds; training stops at the first round
    /// that fails to lower the training loss.
    #[serde(default = "default_n_rounds")]
    pub n_rounds: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_one")]
    pub l2_lambda: f64,
    #[serde(default = "default_one")]
    pub min_child_hessian: f64,
    /// Fraction of rows drawn (without replacement) for each round.
    #[serde(default = "default_one")]
    pub subsample: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: default_n_rounds(),
            max_depth: default_max_depth(),
            learning_rate: default_learning_rate(),
            l2_lambda: 1.0,
            min_child_hessian: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_rounds > 0
            && self.max_depth > 0
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.l2_lambda >= 0.0
            && self.min_child_hessian >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid boosting configuration {self:?}")))
        }
    }
}

mod decimal {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{x:?}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `value < threshold` go left.
        #[serde(with = "decimal")]
        threshold: f64,
        missing_left: bool,
        left: usize,
        right: usize,
        #[serde(with = "decimal")]
        gain: f64,
    },
    Leaf {
        #[serde(with = "decimal")]
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &FeatureMatrix, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                    ..
                } => {
                    let v = x.get(row, *feature);
                    let go_left = if v.is_nan() { *missing_left } else { v < *threshold };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    #[serde(with = "decimal")]
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first round and after each round.
    #[serde(default)]
    pub train_loss: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbtModel {
    /// Log-odds per row.
    pub fn predict_margin(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.names() != self.feature_names.as_slice() {
            return Err(Error::Model(format!(
                "feature names do not match the model: expected {:?}, got {:?}",
                self.feature_names,
                x.names()
            )));
        }
        Ok((0..x.n_rows())
            .map(|r| self.base_score + self.trees.iter().map(|t| t.predict_row(x, r)).sum::<f64>())
            .collect())
    }

    /// Probabilities, clamped to the open unit interval.
    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_margin(x)?
            .into_iter()
            .map(|z| sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
            .collect())
    }

    /// Total split gain per feature, in feature order.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    g[*feature] += gain;
                }
            }
        }
        g
    }

    /// `(name, gain)` pairs sorted by descending gain, ties by name.
    pub fn ranked_importance(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self
            .feature_names
            .iter()
            .cloned()
            .zip(self.gain_importance())
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbtModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Fraction of rows where `p >= 0.5` agrees with `y`.
pub fn accuracy(p: &[f64], y: &[u8]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let hits = p
        .iter()
        .zip(y)
        .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
        .count();
    hits as f64 / p.len() as f64
}

/// Seeded stratified split: about `holdout` of each class goes to the second
/// index set. Both sets are sorted.
pub fn stratified_split(y: &[u8], holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * holdout).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump(v: f64) -> GbtModel {
        GbtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score: 0.0,
            feature_names: vec!["x".into()],
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        threshold: 0.5,
                        missing_left: true,
                        left: 1,
                        right: 2,
                        gain: 2.5,
                    },
                    Node::Leaf { value: -v },
                    Node::Leaf { value: v },
                ],
            }],
            train_loss: vec![],
        }
    }

    #[test]
    fn empty_model_predicts_half() {
        let m = GbtModel {
            format_version: MODEL_FORMAT_VERSION,
            base_score: 0.0,
            feature_names: vec!["x".into()],
            trees: vec![],
            train_loss: vec![],
        };
        let x = FeatureMatrix::from_columns(vec!["x".into()], vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), vec![0.5, 0.5]);
        assert_eq!(m.gain_importance(), vec![0.0]);
    }

    #[test]
    fn manual_two_leaf_tree() {
        let m = stump(1.0);
        let x = FeatureMatrix::from_columns(vec!["x".into()], vec![vec![1.0, 0.0, f64::NAN]]).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let e = 1.0 / (1.0 + (-1f64).exp());
        assert!((p[0] - e).abs() < 1e-15 && (e - 0.7311).abs() < 1e-4);
        assert!((p[1] - (1.0 - e)).abs() < 1e-15);
        assert_eq!(p[1], p[2]);
        assert_eq!(m.gain_importance(), vec![2.5]);
    }

    #[test]
    fn feature_name_mismatch_is_error() {
        let x = FeatureMatrix::from_columns(vec!["y".into()], vec![vec![1.0]]).unwrap();
        assert!(stump(1.0).predict_proba(&x).is_err());
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut m = stump(0.1 + 0.2);
        m.base_score = -1.0 / 3.0;
        let back = GbtModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"threshold\": \"0.5\""));
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
        let (tr, te) = stratified_split(&y, 0.2, 7);
        assert_eq!(te.len(), 20);
        assert_eq!(te.iter().filter(|&&i| y[i] == 1).count(), 2);
        assert_eq!(tr.len() + te.len(), 100);
        assert_eq!(stratified_split(&y, 0.2, 7), (tr, te));
    }
}
