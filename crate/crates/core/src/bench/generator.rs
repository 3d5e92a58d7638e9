//! Seeded generator of EHR-like encounter tables.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ColumnData, ColumnSchema, Dtype, Role, Table};

pub const KEY_COLUMN: &str = "ID";
pub const DEFAULT_TARGET: &str = "TOTAL_CLAIM_COST";

pub const COUNTIES: [&str; 14] = [
    "Barnstable County",
    "Berkshire County",
    "Bristol County",
    "Dukes County",
    "Essex County",
    "Franklin County",
    "Hampden County",
    "Hampshire County",
    "Middlesex County",
    "Nantucket County",
    "Norfolk County",
    "Plymouth County",
    "Suffolk County",
    "Worcester County",
];

pub const PAYERS: [&str; 8] = [
    "Medicare",
    "Medicaid",
    "Blue Cross Blue Shield",
    "Aetna",
    "UnitedHealthcare",
    "Cigna Health",
    "Humana",
    "NO_INSURANCE",
];

/// Share of the payer mass among non-Medicare payers, and coverage fraction.
const OTHER_PAYERS: [(&str, f64, f64); 7] = [
    ("Medicaid", 0.18, 0.9),
    ("Blue Cross Blue Shield", 0.22, 0.75),
    ("Aetna", 0.15, 0.7),
    ("UnitedHealthcare", 0.15, 0.7),
    ("Cigna Health", 0.12, 0.7),
    ("Humana", 0.08, 0.72),
    ("NO_INSURANCE", 0.10, 0.0),
];
const MEDICARE_COVERAGE: f64 = 0.8;

/// Encounter classes with their share and median base cost.
pub const ENCOUNTER_CLASSES: [(&str, f64, f64); 7] = [
    ("ambulatory", 0.06, 150.0),
    ("wellness", 0.05, 130.0),
    ("home", 0.04, 120.0),
    ("outpatient", 0.35, 250.0),
    ("inpatient", 0.15, 1500.0),
    ("emergency", 0.20, 800.0),
    ("urgentcare", 0.15, 200.0),
];

pub const REASONS: [&str; 30] = [
    "Hypertension",
    "Acute bronchitis (disorder)",
    "Viral sinusitis (disorder)",
    "Diabetes",
    "Chronic pain",
    "Prediabetes",
    "Hyperlipidemia",
    "Anemia (disorder)",
    "Otitis media",
    "Streptococcal sore throat (disorder)",
    "Chronic sinusitis (disorder)",
    "Osteoarthritis of knee",
    "Coronary Heart Disease",
    "Asthma",
    "Childhood asthma",
    "Sprain of ankle",
    "Concussion with no loss of consciousness",
    "Fracture of forearm",
    "Laceration of foot",
    "Acute viral pharyngitis (disorder)",
    "Normal pregnancy",
    "Urinary tract infection",
    "Chronic obstructive bronchitis (disorder)",
    "Pulmonary emphysema (disorder)",
    "Atrial Fibrillation",
    "Alzheimer's disease (disorder)",
    "Seizure disorder",
    "Major depression disorder",
    "Acute Cholecystitis",
    "Appendicitis",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub min_age: u32,
    pub max_age: u32,
    /// Overall share of rows paid by Medicare; concentrated in ages 65 and up.
    pub medicare_share: f64,
    pub male_share: f64,
    /// Married, single, divorced, widowed.
    pub marital_shares: [f64; 4],
    pub income_median: f64,
    pub income_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_age: 18,
            max_age: 90,
            medicare_share: 0.3,
            male_share: 0.5,
            marital_shares: [0.5, 0.3, 0.12, 0.08],
            income_median: 80_000.0,
            income_sigma: 0.85,
        }
    }
}

pub const MARITAL: [&str; 4] = ["M", "S", "D", "W"];

/// Schema of generated tables, with `target` as the target-metric column.
pub fn base_schema(target: &str) -> Result<Vec<ColumnSchema>> {
    use Dtype::*;
    let mut cols = vec![
        ColumnSchema::new(KEY_COLUMN, Text, Role::Key),
        ColumnSchema::new("AGE", Numeric, Role::Feature),
        ColumnSchema::new("GENDER", Categorical, Role::QuasiIdentifier),
        ColumnSchema::new("MARITAL", Categorical, Role::Feature),
        ColumnSchema::new("COUNTY", Categorical, Role::QuasiIdentifier),
        ColumnSchema::new("PAYER_NAME", Categorical, Role::Feature),
        ColumnSchema::new("ENCOUNTERCLASS", Categorical, Role::Feature),
        ColumnSchema::new("REASONDESCRIPTION", Categorical, Role::Feature),
        ColumnSchema::new("TOT_INCOME", Numeric, Role::Feature),
        ColumnSchema::new("TOTSLFY", Numeric, Role::Feature),
        ColumnSchema::new("BASE_COST", Numeric, Role::Feature),
        ColumnSchema::new("PAYER_COVERAGE", Numeric, Role::Feature),
        ColumnSchema::new("TOTAL_CLAIM_COST", Numeric, Role::Feature),
    ];
    let t = cols
        .iter_mut()
        .find(|c| c.name == target && c.dtype == Numeric)
        .ok_or_else(|| Error::Config(format!("{target:?} is not a numeric column of the generated table")))?;
    t.role = Role::TargetMetric;
    Ok(cols)
}

/// Same table with `target` as the target-metric column.
pub fn retarget(table: &Table, target: &str) -> Result<Table> {
    table.with_schema(base_schema(target)?)
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn medicare_probability(age: u32, cfg: &GeneratorConfig) -> f64 {
    // relative propensity by age band, rescaled to the configured overall share
    let band = |a: u32| match a {
        65.. => 0.7,
        60..=64 => 0.25,
        _ => 0.05,
    };
    let span = f64::from(cfg.max_age - cfg.min_age + 1);
    let mean: f64 = (cfg.min_age..=cfg.max_age).map(band).sum::<f64>() / span;
    (band(age) * cfg.medicare_share / mean).min(1.0)
}

/// `n_rows` encounters with target metric `TOTAL_CLAIM_COST`, deterministic
/// per seed.
pub fn generate_base_table(n_rows: usize, seed: u64) -> Result<Table> {
    generate_with(n_rows, seed, &GeneratorConfig::default())
}

pub fn generate_with(n_rows: usize, seed: u64, cfg: &GeneratorConfig) -> Result<Table> {
    if n_rows < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 rows, got {n_rows}")));
    }
    if cfg.min_age > cfg.max_age || !(0.0..=1.0).contains(&cfg.medicare_share) {
        return Err(Error::Config("invalid generator configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marital = WeightedIndex::new(cfg.marital_shares).map_err(|e| Error::Config(e.to_string()))?;
    let other_payer = WeightedIndex::new(OTHER_PAYERS.iter().map(|p| p.1)).expect("static weights");
    let encounter = WeightedIndex::new(ENCOUNTER_CLASSES.iter().map(|e| e.1)).expect("static weights");
    let reason =
        WeightedIndex::new((0..REASONS.len()).map(|i| 1.0 / (i as f64 + 1.0).powf(0.8))).expect("static weights");
    let income = LogNormal::new(cfg.income_median.ln(), cfg.income_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let jitter = LogNormal::new(0.0, 0.35).expect("static parameters");
    let extra = LogNormal::new(300f64.ln(), 1.0).expect("static parameters");

    let mut key = Vec::with_capacity(n_rows);
    let mut age = Vec::with_capacity(n_rows);
    let mut gender = Vec::with_capacity(n_rows);
    let mut mar = Vec::with_capacity(n_rows);
    let mut county = Vec::with_capacity(n_rows);
    let mut payer = Vec::with_capacity(n_rows);
    let mut enc = Vec::with_capacity(n_rows);
    let mut reasons = Vec::with_capacity(n_rows);
    let mut tot_income = Vec::with_capacity(n_rows);
    let mut totslfy = Vec::with_capacity(n_rows);
    let mut base_cost = Vec::with_capacity(n_rows);
    let mut coverage = Vec::with_capacity(n_rows);
    let mut claim = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let a = rng.random_range(cfg.min_age..=cfg.max_age);
        key.push(Some(format!("P{i:06}")));
        age.push(Some(f64::from(a)));
        let g = if rng.random_bool(cfg.male_share) { "M" } else { "F" };
        gender.push(Some(g.to_string()));
        mar.push(Some(MARITAL[marital.sample(&mut rng)].to_string()));
        county.push(Some(COUNTIES[rng.random_range(0..COUNTIES.len())].to_string()));
        let (p, cov) = if rng.random_bool(medicare_probability(a, cfg)) {
            ("Medicare", MEDICARE_COVERAGE)
        } else {
            let o = OTHER_PAYERS[other_payer.sample(&mut rng)];
            (o.0, o.2)
        };
        payer.push(Some(p.to_string()));
        let e = ENCOUNTER_CLASSES[encounter.sample(&mut rng)];
        enc.push(Some(e.0.to_string()));
        reasons.push(Some(REASONS[reason.sample(&mut rng)].to_string()));
        let inc = income.sample(&mut rng).round();
        tot_income.push(Some(inc));
        totslfy.push(Some((inc * rng.random::<f64>()).round()));
        let base = cents(e.2 * jitter.sample(&mut rng));
        base_cost.push(Some(base));
        let total = cents(base + extra.sample(&mut rng));
        claim.push(Some(total));
        coverage.push(Some(cents(total * cov * rng.random_range(0.9..1.0))));
    }
    Table::from_columns(
        base_schema(DEFAULT_TARGET)?,
        vec![
            ColumnData::Text(key),
            ColumnData::Numeric(age),
            ColumnData::Text(gender),
            ColumnData::Text(mar),
            ColumnData::Text(county),
            ColumnData::Text(payer),
            ColumnData::Text(enc),
            ColumnData::Text(reasons),
            ColumnData::Numeric(tot_income),
            ColumnData::Numeric(totslfy),
            ColumnData::Numeric(base_cost),
            ColumnData::Numeric(coverage),
            ColumnData::Numeric(claim),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unique_keys() {
        let a = generate_base_table(1000, 7).unwrap();
        let b = generate_base_table(1000, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_base_table(1000, 8).unwrap());
        let keys: std::collections::BTreeSet<String> = a.keys().into_iter().collect();
        assert_eq!(keys.len(), 1000);
        assert_eq!(a.missing_count(), 0);
        assert!(generate_base_table(99, 1).is_err());
    }

    #[test]
    fn medicare_share_matches_config() {
        let t = generate_base_table(10_000, 3).unwrap();
        let payer = t.text("PAYER_NAME").unwrap();
        let share = payer.iter().filter(|p| p.as_deref() == Some("Medicare")).count() as f64 / 1e4;
        // binomial sd at n = 10,000 is about 0.005
        assert!((share - 0.3).abs() < 0.05, "share {share}");
    }

    #[test]
    fn retarget_moves_role() {
        let t = generate_base_table(100, 1).unwrap();
        let r = retarget(&t, "BASE_COST").unwrap();
        assert_eq!(r.target_column().name, "BASE_COST");
        assert_eq!(r.column_schema(DEFAULT_TARGET).unwrap().role, Role::Feature);
        assert!(retarget(&t, "GENDER").is_err());
    }
}
