use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundTruth, INTERVENTION_PREFIX};
use crate::dsl::{column_types, compile};
use crate::error::{Error, Result};
use crate::table::{ColumnData, Table};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterventionMechanism {
    Multiply { column: String, factor: f64 },
    Scale { column: String, factor: f64 },
    AddGaussian { column: String, sigma: f64 },
    /// Sets the column to 0 with probability `p_clean`, or `p_noisy` for rows
    /// already carrying noise.
    ZeroWithProb { column: String, p_clean: f64, p_noisy: f64 },
}

impl InterventionMechanism {
    pub fn column(&self) -> &str {
        match self {
            Self::Multiply { column, .. }
            | Self::Scale { column, .. }
            | Self::AddGaussian { column, .. }
            | Self::ZeroWithProb { column, .. } => column,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub name: String,
    /// Row predicate over control values.
    pub predicate: String,
    pub mechanism: InterventionMechanism,
    #[serde(default)]
    pub seed: u64,
}

/// Clones `control` and applies the intervention to matching rows.
pub fn apply_intervention(control: &Table, spec: &InterventionSpec) -> Result<(Table, GroundTruth)> {
    apply_intervention_with_noise(control, spec, None)
}

/// As [`apply_intervention`]; `noisy` gives each control row's noise status
/// for the probabilistic mechanism.
pub fn apply_intervention_with_noise(
    control: &Table,
    spec: &InterventionSpec,
    noisy: Option<&[bool]>,
) -> Result<(Table, GroundTruth)> {
    let mask = compile(&spec.predicate, &column_types(control), None)?.eval_mask(control)?;
    if let Some(n) = noisy {
        if n.len() != control.n_rows() {
            return Err(Error::InvalidInput("noise status must cover every control row".into()));
        }
    }
    let column = spec.mechanism.column();
    let idx = control
        .column_index(column)
        .ok_or_else(|| Error::Config(format!("intervention column {column:?} does not exist")))?;
    let (schema, mut cols) = control.clone().into_parts();
    let ColumnData::Numeric(values) = &mut cols[idx] else {
        return Err(Error::Config(format!("intervention column {column:?} is not numeric")));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut flags = vec![false; control.n_rows()];
    for (row, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        match &spec.mechanism {
            InterventionMechanism::Multiply { factor, .. } | InterventionMechanism::Scale { factor, .. } => {
                values[row] = values[row].map(|v| v * factor);
                flags[row] = true;
            }
            InterventionMechanism::AddGaussian { sigma, .. } => {
                let normal = Normal::new(0.0, *sigma).map_err(|e| Error::Config(e.to_string()))?;
                let delta = normal.sample(&mut rng);
                values[row] = values[row].map(|v| v + delta);
                flags[row] = true;
            }
            InterventionMechanism::ZeroWithProb { p_clean, p_noisy, .. } => {
                let p = if noisy.is_some_and(|n| n[row]) { *p_noisy } else { *p_clean };
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    values[row] = Some(0.0);
                    flags[row] = true;
                }
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        warn!("intervention {:?} matched no rows", spec.name);
    }
    let test = Table::from_columns(schema, cols)?;
    let mut truth = GroundTruth::clean(control.keys());
    for (row, &f) in flags.iter().enumerate() {
        if f {
            truth.intervention[row] = true;
            truth.mechanisms[row].push(format!("{INTERVENTION_PREFIX}{}", spec.name));
        }
    }
    Ok((test, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::generator::{generate_base_table, retarget};

    fn spec(predicate: &str, mechanism: InterventionMechanism) -> InterventionSpec {
        InterventionSpec {
            name: "x".into(),
            predicate: predicate.into(),
            mechanism,
            seed: 5,
        }
    }

    #[test]
    fn cost_uplift_on_matching_rows_only() {
        let control = generate_base_table(5000, 2).unwrap();
        let pred = "TOT_INCOME >= 150000 and AGE > 59 and TOTSLFY >= 100000 and PAYER_NAME == 'Medicare'";
        let (test, truth) = apply_intervention(
            &control,
            &spec(
                pred,
                InterventionMechanism::Multiply {
                    column: "TOTAL_CLAIM_COST".into(),
                    factor: 1.2,
                },
            ),
        )
        .unwrap();
        let before = control.numeric("TOTAL_CLAIM_COST").unwrap();
        let after = test.numeric("TOTAL_CLAIM_COST").unwrap();
        let age = control.numeric("AGE").unwrap();
        let inc = control.numeric("TOT_INCOME").unwrap();
        let slf = control.numeric("TOTSLFY").unwrap();
        let payer = control.text("PAYER_NAME").unwrap();
        let mut n = 0;
        for r in 0..control.n_rows() {
            let hit = inc[r].unwrap() >= 150000.0
                && age[r].unwrap() > 59.0
                && slf[r].unwrap() >= 100000.0
                && payer[r].as_deref() == Some("Medicare");
            assert_eq!(truth.intervention[r], hit);
            if hit {
                n += 1;
                assert_eq!(after[r].unwrap(), before[r].unwrap() * 1.2);
            } else {
                assert_eq!(after[r], before[r]);
            }
        }
        let share = n as f64 / control.n_rows() as f64;
        assert!((0.02..=0.05).contains(&share), "planted share {share}");
    }

    #[test]
    fn identity_factor_keeps_values_and_flags() {
        let control = generate_base_table(200, 1).unwrap();
        let (test, truth) = apply_intervention(
            &control,
            &spec(
                "AGE > 50",
                InterventionMechanism::Multiply {
                    column: "TOTAL_CLAIM_COST".into(),
                    factor: 1.0,
                },
            ),
        )
        .unwrap();
        assert_eq!(test, control);
        assert!(truth.intervention.iter().any(|&f| f));
    }

    #[test]
    fn gaussian_jitter_and_zeroing() {
        let control = retarget(&generate_base_table(2000, 4).unwrap(), "BASE_COST").unwrap();
        let s = spec(
            "GENDER == 'M' and MARITAL == 'D' and AGE > 40",
            InterventionMechanism::AddGaussian {
                column: "BASE_COST".into(),
                sigma: 30.0,
            },
        );
        let (a, ta) = apply_intervention(&control, &s).unwrap();
        let (b, _) = apply_intervention(&control, &s).unwrap();
        assert_eq!(a, b);
        let n = ta.intervention.iter().filter(|&&f| f).count();
        assert!(n > 0);
        let noisy = vec![true; control.n_rows()];
        let z = spec(
            "AGE > 0",
            InterventionMechanism::ZeroWithProb {
                column: "TOTSLFY".into(),
                p_clean: 1.0,
                p_noisy: 0.0,
            },
        );
        let (_, t0) = apply_intervention_with_noise(&control, &z, Some(&noisy)).unwrap();
        assert!(t0.intervention.iter().all(|&f| !f));
        let (zeroed, t1) = apply_intervention(&control, &z).unwrap();
        assert!(t1.intervention.iter().all(|&f| f));
        assert!(zeroed.numeric("TOTSLFY").unwrap().iter().all(|v| *v == Some(0.0)));
    }
}
