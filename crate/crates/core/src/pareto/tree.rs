//! Shallow CART trees grown on weighted Gini impurity.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsl::quote;
use crate::error::{Error, Result};
use crate::table::{format_f64, ColumnData, Dtype, Table};

/// Per-class multipliers on the sample weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub zero: f64,
    pub one: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self { zero: 1.0, one: 1.0 }
    }
}

impl ClassWeights {
    pub fn get(&self, class: u8) -> f64 {
        if class == 0 {
            self.zero
        } else {
            self.one
        }
    }
}

impl Serialize for ClassWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m: BTreeMap<&str, f64> = [("0", self.zero), ("1", self.one)].into();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let m = BTreeMap::<String, f64>::deserialize(d)?;
        let mut cw = ClassWeights::default();
        for (k, v) in m {
            if !(v > 0.0 && v.is_finite()) {
                return Err(D::Error::custom(format!("class weight {v} must be positive")));
            }
            match k.as_str() {
                "0" => cw.zero = v,
                "1" => cw.one = v,
                other => return Err(D::Error::custom(format!("unknown class {other:?}"))),
            }
        }
        Ok(cw)
    }
}

/// One column of tree input.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeColumn {
    Numeric(Vec<Option<f64>>),
    /// Category codes into `levels`.
    Categorical {
        codes: Vec<Option<u32>>,
        levels: Vec<String>,
    },
}

/// Input columns of a weighted tree, with names.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeData {
    pub names: Vec<String>,
    pub columns: Vec<TreeColumn>,
    pub n_rows: usize,
}

impl TreeData {
    pub fn numeric(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        Self {
            names,
            columns: columns
                .into_iter()
                .map(|c| TreeColumn::Numeric(c.into_iter().map(|v| (!v.is_nan()).then_some(v)).collect()))
                .collect(),
            n_rows,
        }
    }

    /// Uses the named table columns as-is: numeric columns split on
    /// thresholds, categorical and boolean columns on category sets.
    pub fn from_table(table: &Table, columns: &[String]) -> Result<Self> {
        let mut out = Vec::new();
        for name in columns {
            let col = table
                .column(name)
                .ok_or_else(|| Error::Schema(format!("unknown tree column {name:?}")))?;
            if table.column_schema(name).unwrap().dtype == Dtype::Text {
                return Err(Error::Schema(format!("free-text column {name:?} cannot be split on")));
            }
            out.push(match col {
                ColumnData::Numeric(v) => TreeColumn::Numeric(v.clone()),
                _ => {
                    let rendered: Vec<Option<String>> = (0..table.n_rows())
                        .map(|r| (!col.is_missing(r)).then(|| col.value(r).render()))
                        .collect();
                    let mut levels: Vec<String> = rendered.iter().flatten().cloned().collect();
                    levels.sort();
                    levels.dedup();
                    let codes = rendered
                        .iter()
                        .map(|v| v.as_ref().map(|s| levels.binary_search(s).unwrap() as u32))
                        .collect();
                    TreeColumn::Categorical { codes, levels }
                }
            });
        }
        Ok(Self {
            names: columns.to_vec(),
            columns: out,
            n_rows: table.n_rows(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SplitRule {
    /// `value < threshold` goes left.
    Numeric { threshold: f64, missing_left: bool },
    /// Values in `left` go left; other categories go right.
    Categorical { left: Vec<String>, missing_left: bool },
}

/// One side of a split, as a condition on a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub rule: SplitRule,
    pub left: bool,
    /// Whether rows with a missing value take this branch.
    pub includes_missing: bool,
    /// Whether the training rows at the split had missing values here.
    pub missing_seen: bool,
}

impl Condition {
    /// Expression-language text of the condition.
    pub fn to_dsl(&self) -> String {
        let f = &self.feature;
        let base = match (&self.rule, self.left) {
            (SplitRule::Numeric { threshold, .. }, true) => format!("{f} < {}", format_f64(*threshold)),
            (SplitRule::Numeric { threshold, .. }, false) => format!("{f} >= {}", format_f64(*threshold)),
            (SplitRule::Categorical { left, .. }, side) => {
                let set: Vec<String> = left.iter().map(|l| quote(l)).collect();
                let member = format!("{f} in [{}]", set.join(", "));
                if side {
                    member
                } else {
                    format!("not ({member})")
                }
            }
        };
        if self.includes_missing && self.missing_seen {
            format!("({base} or is_missing({f}))")
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub mass: f64,
    pub mean_p_c: f64,
    pub mean_p_n: f64,
    /// Sum of `p_C` over the leaf rows.
    pub p_c_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: usize,
    pub class: u8,
    /// Effective weight of each class, `w_i * class_weight(y_i)` summed.
    pub class_mass: [f64; 2],
    pub rows: Vec<usize>,
    pub path: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<LeafStats>,
}

impl Leaf {
    pub fn stats(&self) -> &LeafStats {
        self.stats.as_ref().expect("leaf statistics attached")
    }

    /// Conjunction of the path conditions; `true` for a root leaf.
    pub fn rule(&self) -> String {
        if self.path.is_empty() {
            "true".into()
        } else {
            self.path.iter().map(Condition::to_dsl).collect::<Vec<_>>().join(" and ")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TreeNode {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        impurity_decrease: f64,
    },
    Leaf {
        leaf: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    pub feature_names: Vec<String>,
    pub max_depth: usize,
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Leaves in depth-first, left-first order; `leaves[i].id == i`.
    pub leaves: Vec<Leaf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitParams {
    pub class_weights: ClassWeights,
    pub max_depth: usize,
    /// Minimum effective weight on each side of a split.
    pub min_leaf_weight: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            class_weights: ClassWeights::default(),
            max_depth: 5,
            min_leaf_weight: 0.0,
        }
    }
}

/// Twice the weighted Gini impurity mass `W * gini`, i.e. `2 w0 w1 / W`.
fn gini_mass(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    if w > 0.0 {
        2.0 * w0 * w1 / w
    } else {
        0.0
    }
}

struct Best {
    feature: usize,
    rule: SplitRule,
    decrease: f64,
}

struct Fitter<'a> {
    x: &'a TreeData,
    y: &'a [u8],
    eff: Vec<f64>,
    params: FitParams,
    nodes: Vec<TreeNode>,
    leaves: Vec<Leaf>,
}

impl Fitter<'_> {
    fn masses(&self, rows: &[usize]) -> [f64; 2] {
        let mut m = [0.0; 2];
        for &r in rows {
            m[self.y[r] as usize] += self.eff[r];
        }
        m
    }

    fn consider(&self, best: &mut Option<Best>, parent: f64, l: [f64; 2], r: [f64; 2], feature: usize, rule: SplitRule) {
        let min = self.params.min_leaf_weight;
        let (wl, wr) = (l[0] + l[1], r[0] + r[1]);
        if wl <= 0.0 || wr <= 0.0 || wl < min || wr < min {
            return;
        }
        let decrease = parent - gini_mass(l[0], l[1]) - gini_mass(r[0], r[1]);
        if best.as_ref().is_none_or(|b| decrease > b.decrease) {
            *best = Some(Best {
                feature,
                rule,
                decrease,
            });
        }
    }

    fn best_split(&self, rows: &[usize], total: [f64; 2]) -> Option<Best> {
        let parent = gini_mass(total[0], total[1]);
        let mut best: Option<Best> = None;
        for (j, col) in self.x.columns.iter().enumerate() {
            match col {
                TreeColumn::Numeric(v) => {
                    let mut present: Vec<(f64, usize)> = Vec::new();
                    let mut miss = [0.0; 2];
                    for &r in rows {
                        if self.eff[r] <= 0.0 {
                            continue;
                        }
                        match v[r] {
                            Some(x) => present.push((x, r)),
                            None => miss[self.y[r] as usize] += self.eff[r],
                        }
                    }
                    present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let mut left = [0.0; 2];
                    for i in 0..present.len() {
                        let (x, r) = present[i];
                        if i > 0 && x > present[i - 1].0 {
                            let pv = present[i - 1].0;
                            let mid = pv + (x - pv) / 2.0;
                            let threshold = if mid > pv { mid } else { x };
                            for missing_left in [false, true] {
                                let l = if missing_left {
                                    [left[0] + miss[0], left[1] + miss[1]]
                                } else {
                                    left
                                };
                                let rr = [total[0] - l[0], total[1] - l[1]];
                                self.consider(&mut best, parent, l, rr, j, SplitRule::Numeric { threshold, missing_left });
                            }
                        }
                        left[self.y[r] as usize] += self.eff[r];
                    }
                }
                TreeColumn::Categorical { codes, levels } => {
                    // per-category class mass; index `levels.len()` holds missing
                    let k = levels.len();
                    let mut mass = vec![[0.0f64; 2]; k + 1];
                    for &r in rows {
                        if self.eff[r] <= 0.0 {
                            continue;
                        }
                        let c = codes[r].map_or(k, |c| c as usize);
                        mass[c][self.y[r] as usize] += self.eff[r];
                    }
                    let mut present: Vec<usize> = (0..=k).filter(|&c| mass[c][0] + mass[c][1] > 0.0).collect();
                    // ordering by class-1 share makes prefix splits optimal for two classes
                    present.sort_by(|&a, &b| {
                        let ra = mass[a][1] / (mass[a][0] + mass[a][1]);
                        let rb = mass[b][1] / (mass[b][0] + mass[b][1]);
                        ra.partial_cmp(&rb).unwrap_or(Ordering::Equal).then(a.cmp(&b))
                    });
                    let mut left = [0.0; 2];
                    for i in 0..present.len().saturating_sub(1) {
                        let c = present[i];
                        left[0] += mass[c][0];
                        left[1] += mass[c][1];
                        let mut set: Vec<String> = present[..=i].iter().filter(|&&c| c < k).map(|&c| levels[c].clone()).collect();
                        set.sort();
                        let missing_left = present[..=i].contains(&k);
                        if set.is_empty() {
                            // missing alone on the left is expressed as every category on the right
                            continue;
                        }
                        let rr = [total[0] - left[0], total[1] - left[1]];
                        self.consider(&mut best, parent, left, rr, j, SplitRule::Categorical { left: set, missing_left });
                    }
                }
            }
        }
        best.filter(|b| b.decrease > 1e-12 * (total[0] + total[1]))
    }

    fn goes_left(&self, feature: usize, rule: &SplitRule, row: usize) -> bool {
        match (&self.x.columns[feature], rule) {
            (TreeColumn::Numeric(v), SplitRule::Numeric { threshold, missing_left }) => {
                v[row].map_or(*missing_left, |x| x < *threshold)
            }
            (TreeColumn::Categorical { codes, levels }, SplitRule::Categorical { left, missing_left }) => {
                codes[row].map_or(*missing_left, |c| left.binary_search(&levels[c as usize]).is_ok())
            }
            _ => unreachable!("split rule matches column kind"),
        }
    }

    fn missing_seen(&self, feature: usize, rows: &[usize]) -> bool {
        match &self.x.columns[feature] {
            TreeColumn::Numeric(v) => rows.iter().any(|&r| v[r].is_none()),
            TreeColumn::Categorical { codes, .. } => rows.iter().any(|&r| codes[r].is_none()),
        }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, path: Vec<Condition>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { leaf: usize::MAX });
        let total = self.masses(&rows);
        let split = if depth < self.params.max_depth && total[0] > 0.0 && total[1] > 0.0 {
            self.best_split(&rows, total)
        } else {
            None
        };
        match split {
            None => {
                let leaf = self.leaves.len();
                self.leaves.push(Leaf {
                    id: leaf,
                    class: u8::from(total[1] > total[0]),
                    class_mass: total,
                    rows,
                    path,
                    stats: None,
                });
                self.nodes[id] = TreeNode::Leaf { leaf };
            }
            Some(b) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| self.goes_left(b.feature, &b.rule, r));
                let missing_seen = self.missing_seen(b.feature, &rows);
                let missing_left = match &b.rule {
                    SplitRule::Numeric { missing_left, .. } | SplitRule::Categorical { missing_left, .. } => *missing_left,
                };
                let cond = |left: bool| Condition {
                    feature: self.x.names[b.feature].clone(),
                    rule: b.rule.clone(),
                    left,
                    includes_missing: missing_left == left,
                    missing_seen,
                };
                let mut lp = path.clone();
                lp.push(cond(true));
                let mut rp = path;
                rp.push(cond(false));
                let left = self.grow(l, depth + 1, lp);
                let right = self.grow(r, depth + 1, rp);
                self.nodes[id] = TreeNode::Split {
                    feature: b.feature,
                    rule: b.rule,
                    left,
                    right,
                    impurity_decrease: b.decrease / 2.0,
                };
            }
        }
        id
    }
}

/// Fits a tree on labels `y` with per-row weights `w`; each row contributes
/// `w_i * class_weight(y_i)` to the impurity. Only rows with positive weight
/// shape the splits, so integer weights behave exactly like row replication.
pub fn fit_weighted_tree(x: &TreeData, y: &[u8], w: &[f64], params: &FitParams) -> Result<WeightedTree> {
    let n = x.n_rows;
    if n == 0 {
        return Err(Error::InvalidInput("cannot fit a tree on zero rows".into()));
    }
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidInput(format!(
            "tree inputs disagree in length: {n} rows, {} labels, {} weights",
            y.len(),
            w.len()
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all sample weights are zero".into()));
    }
    let eff = (0..n).map(|i| w[i] * params.class_weights.get(y[i])).collect();
    let mut f = Fitter {
        x,
        y,
        eff,
        params: *params,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    f.grow((0..n).collect(), 0, Vec::new());
    Ok(WeightedTree {
        feature_names: x.names.clone(),
        max_depth: params.max_depth,
        nodes: f.nodes,
        leaves: f.leaves,
    })
}

impl WeightedTree {
    /// Attaches leaf statistics: weight mass and `w`-weighted means of `p_C`
    /// and `p_N`. A leaf whose weights are all zero uses plain means.
    pub fn annotate(&mut self, w: &[f64], p_c: &[f64], p_n: &[f64]) {
        for leaf in &mut self.leaves {
            let mass: f64 = leaf.rows.iter().map(|&r| w[r]).sum();
            let p_c_sum = leaf.rows.iter().map(|&r| p_c[r]).sum();
            let (mean_p_c, mean_p_n) = if mass > 0.0 {
                (
                    leaf.rows.iter().map(|&r| w[r] * p_c[r]).sum::<f64>() / mass,
                    leaf.rows.iter().map(|&r| w[r] * p_n[r]).sum::<f64>() / mass,
                )
            } else if leaf.rows.is_empty() {
                (0.0, 0.0)
            } else {
                let k = leaf.rows.len() as f64;
                (
                    leaf.rows.iter().map(|&r| p_c[r]).sum::<f64>() / k,
                    leaf.rows.iter().map(|&r| p_n[r]).sum::<f64>() / k,
                )
            };
            leaf.stats = Some(LeafStats {
                mass,
                mean_p_c,
                mean_p_n,
                p_c_sum,
            });
        }
    }

    /// Leaf id of every training row.
    pub fn leaf_of_rows(&self, n_rows: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_rows];
        for leaf in &self.leaves {
            for &r in &leaf.rows {
                out[r] = leaf.id;
            }
        }
        out
    }

    /// Structure without row membership or statistics, for comparing trees.
    pub fn shape(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.shape_rec(0, &mut out);
        out
    }

    fn shape_rec(&self, node: usize, out: &mut Vec<String>) {
        match &self.nodes[node] {
            TreeNode::Leaf { leaf } => out.push(format!("leaf class={}", self.leaves[*leaf].class)),
            TreeNode::Split { feature, rule, left, right, .. } => {
                out.push(format!("split f{feature} {rule:?}"));
                self.shape_rec(*left, out);
                self.shape_rec(*right, out);
            }
        }
    }
}
