use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, NOISE_PREFIX};
use crate::dsl::{column_types, compile};
use crate::error::{Error, Result};
use crate::table::{ColumnData, Table};

fn default_factor_range() -> [f64; 2] {
    [3.0, 5.0]
}

fn default_predicate() -> String {
    "true".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseMechanism {
    /// Appends a copy of the row under a fresh key.
    Duplicate,
    /// Multiplies the value by a factor drawn uniformly from `factor_range`.
    Outlier {
        column: String,
        #[serde(default = "default_factor_range")]
        factor_range: [f64; 2],
    },
    Missing { column: String },
    /// Rounds the value to the nearest multiple of `granularity`.
    Rounding { column: String, granularity: f64 },
    Zero { column: String },
    /// Garbles the category label with a one-character edit.
    TextCorruption { column: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub name: String,
    pub mechanism: NoiseMechanism,
    /// Fraction of the input rows to target, drawn uniformly from this range.
    pub rate_range: [f64; 2],
    /// Eligible rows.
    #[serde(default = "default_predicate")]
    pub predicate: String,
    #[serde(default)]
    pub seed: u64,
}

fn corrupt(s: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < 3 {
        return format!("{s}?");
    }
    let i = rng.random_range(1..chars.len() - 1);
    let mut out = chars.clone();
    if rng.random_bool(0.5) {
        out.remove(i);
    } else {
        out.swap(i, i + 1);
    }
    let out: String = out.into_iter().collect();
    if out == s {
        format!("{s}?")
    } else {
        out
    }
}

/// Applies each spec in order. Only the input rows are eligible; a row's noise
/// flag is set when a mechanism changed one of its cells, and appended
/// duplicates are flagged themselves.
pub fn inject_noise(test: &Table, specs: &[NoiseSpec]) -> Result<(Table, GroundTruth)> {
    let n_input = test.n_rows();
    let mut table = test.clone();
    let mut truth = GroundTruth::clean(test.keys());
    for spec in specs {
        let [lo, hi] = spec.rate_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("noise {:?}: bad rate range [{lo}, {hi}]", spec.name)));
        }
        let mask = compile(&spec.predicate, &column_types(&table), None)?.eval_mask(&table)?;
        let eligible: Vec<usize> = (0..n_input).filter(|&r| mask[r]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let rate = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let wanted = (rate * n_input as f64).round() as usize;
        if wanted > eligible.len() {
            warn!(
                "noise {:?}: {} eligible rows, fewer than the {wanted} targeted",
                spec.name,
                eligible.len()
            );
        }
        let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), wanted.min(eligible.len()))
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        chosen.sort_unstable();

        let (schema, mut cols) = table.into_parts();
        let mut changed: Vec<usize> = Vec::new();
        match &spec.mechanism {
            NoiseMechanism::Duplicate => {
                let key_col = schema.iter().position(|c| c.role == crate::table::Role::Key).unwrap();
                for col in cols.iter_mut() {
                    col.append_rows(&chosen);
                }
                let ColumnData::Text(keys) = &mut cols[key_col] else {
                    return Err(Error::Schema("key column must be text".into()));
                };
                let offset = truth.keys.len();
                for (j, &r) in chosen.iter().enumerate() {
                    let k = format!("{}~{}", keys[r].as_deref().unwrap_or_default(), spec.name);
                    keys[offset + j] = Some(k.clone());
                    truth.push_row(k);
                    changed.push(offset + j);
                }
            }
            mech => {
                let name = match mech {
                    NoiseMechanism::Outlier { column, .. }
                    | NoiseMechanism::Missing { column }
                    | NoiseMechanism::Rounding { column, .. }
                    | NoiseMechanism::Zero { column }
                    | NoiseMechanism::TextCorruption { column } => column,
                    NoiseMechanism::Duplicate => unreachable!(),
                };
                let idx = schema
                    .iter()
                    .position(|c| &c.name == name)
                    .ok_or_else(|| Error::Config(format!("noise {:?}: unknown column {name:?}", spec.name)))?;
                for &r in &chosen {
                    let did = match (mech, &mut cols[idx]) {
                        (NoiseMechanism::Outlier { factor_range: [a, b], .. }, ColumnData::Numeric(v)) => {
                            let f = if b > a { rng.random_range(*a..=*b) } else { *a };
                            let old = v[r];
                            v[r] = old.map(|x| x * f);
                            v[r] != old
                        }
                        (NoiseMechanism::Missing { .. }, col) => {
                            let was = col.is_missing(r);
                            col.set_missing(r);
                            !was
                        }
                        (NoiseMechanism::Rounding { granularity, .. }, ColumnData::Numeric(v)) => {
                            let old = v[r];
                            v[r] = old.map(|x| (x / granularity).round() * granularity);
                            v[r] != old
                        }
                        (NoiseMechanism::Zero { .. }, ColumnData::Numeric(v)) => {
                            let old = v[r];
                            v[r] = old.map(|_| 0.0);
                            v[r] != old
                        }
                        (NoiseMechanism::TextCorruption { .. }, ColumnData::Text(v)) => match &v[r] {
                            Some(s) => {
                                v[r] = Some(corrupt(s, &mut rng));
                                true
                            }
                            None => false,
                        },
                        _ => {
                            return Err(Error::Config(format!(
                                "noise {:?}: mechanism does not apply to column {name:?}",
                                spec.name
                            )))
                        }
                    };
                    if did {
                        changed.push(r);
                    }
                }
            }
        }
        for r in changed {
            truth.noise[r] = true;
            truth.mechanisms[r].push(format!("{NOISE_PREFIX}{}", spec.name));
        }
        table = Table::from_columns(schema, cols)?;
    }
    Ok((table, truth))
}
