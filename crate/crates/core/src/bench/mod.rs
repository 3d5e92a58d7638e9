//! Synthetic benchmarks: a seeded EHR-like base table, a planted intervention
//! and optional injected noise, each with per-row ground truth.

pub mod generator;
pub mod inject;
pub mod intervention;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generator::{base_schema, generate_base_table, generate_with, retarget, GeneratorConfig, KEY_COLUMN};
pub use inject::{inject_noise, NoiseMechanism, NoiseSpec};
pub use intervention::{apply_intervention, apply_intervention_with_noise, InterventionMechanism, InterventionSpec};

use crate::error::{Error, Result};
use crate::noise::NoiseRule;
use crate::table::Table;

pub const DEFAULT_ROWS: usize = 10_000;

/// Prefixes of the mechanism labels recorded in [`GroundTruth::mechanisms`].
pub const INTERVENTION_PREFIX: &str = "intervention:";
pub const NOISE_PREFIX: &str = "noise:";

/// Per-row truth for a generated test table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub keys: Vec<String>,
    pub intervention: Vec<bool>,
    pub noise: Vec<bool>,
    /// Labels such as `noise:duplicate-rows` or `intervention:cost-uplift`.
    pub mechanisms: Vec<Vec<String>>,
}

impl GroundTruth {
    pub fn clean(keys: Vec<String>) -> Self {
        let n = keys.len();
        Self {
            keys,
            intervention: vec![false; n],
            noise: vec![false; n],
            mechanisms: vec![Vec::new(); n],
        }
    }

    pub(crate) fn push_row(&mut self, key: String) {
        self.keys.push(key);
        self.intervention.push(false);
        self.noise.push(false);
        self.mechanisms.push(Vec::new());
    }

    /// Row layout of `other` with the flags of both (matched by key).
    pub fn merged(&self, other: &GroundTruth) -> GroundTruth {
        let index: HashMap<&str, usize> = self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut out = other.clone();
        for (r, k) in other.keys.iter().enumerate() {
            if let Some(&i) = index.get(k.as_str()) {
                out.intervention[r] |= self.intervention[i];
                out.noise[r] |= self.noise[i];
                let mut m = self.mechanisms[i].clone();
                m.extend(other.mechanisms[r].iter().cloned());
                out.mechanisms[r] = m;
            }
        }
        out
    }

    /// Flags for `keys`, in that order; unknown keys are an error.
    pub fn select(&self, keys: &[String]) -> Result<(Vec<bool>, Vec<bool>)> {
        let index: HashMap<&str, usize> = self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut iv = Vec::with_capacity(keys.len());
        let mut nv = Vec::with_capacity(keys.len());
        for k in keys {
            let &i = index
                .get(k.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("key {k:?} missing from ground truth")))?;
            iv.push(self.intervention[i]);
            nv.push(self.noise[i]);
        }
        Ok((iv, nv))
    }

    pub fn n_intervention(&self) -> usize {
        self.intervention.iter().filter(|&&f| f).count()
    }

    pub fn n_noise(&self) -> usize {
        self.noise.iter().filter(|&&f| f).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record(["key", "intervention_flag", "noise_flag", "mechanisms"])?;
        for i in 0..self.keys.len() {
            w.write_record([
                self.keys[i].as_str(),
                if self.intervention[i] { "1" } else { "0" },
                if self.noise[i] { "1" } else { "0" },
                &self.mechanisms[i].join(";"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut t = GroundTruth::default();
        let flag = |s: &str| match s {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(Error::InvalidInput(format!("bad ground-truth flag {other:?}"))),
        };
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::InvalidInput("ground-truth rows need key and two flags".into()));
            }
            t.keys.push(rec[0].to_string());
            t.intervention.push(flag(&rec[1])?);
            t.noise.push(flag(&rec[2])?);
            t.mechanisms.push(
                rec.get(3)
                    .filter(|m| !m.is_empty())
                    .map(|m| m.split(';').map(str::to_string).collect())
                    .unwrap_or_default(),
            );
        }
        Ok(t)
    }
}

/// A shipped benchmark scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub target: String,
    /// Inject noise into the base table before the intervention, so both
    /// snapshots carry it and the intervention can depend on it.
    #[serde(default)]
    pub noise_first: bool,
    pub intervention: InterventionSpec,
    /// Noise regimes by name (`n1`, `n2`); `n0` is always the empty regime.
    #[serde(default)]
    pub noise: BTreeMap<String, Vec<NoiseSpec>>,
    /// Noise-inference rules added to the schema defaults.
    #[serde(default)]
    pub noise_rules: Vec<NoiseRule>,
}

const PRESETS: [(&str, &str, &str); 4] = [
    ("t1", include_str!("../../presets/t1.toml"), include_str!("../../presets/t1_mock.json")),
    ("t2", include_str!("../../presets/t2.toml"), include_str!("../../presets/t2_mock.json")),
    ("t3", include_str!("../../presets/t3.toml"), include_str!("../../presets/t3_mock.json")),
    ("meps", include_str!("../../presets/meps.toml"), include_str!("../../presets/meps_mock.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset(name: &str) -> Result<Preset> {
    let (_, text, _) = PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?} (known: {})", preset_names().join(", "))))?;
    toml::from_str(text).map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

/// Canned provider responses for a preset, as JSON text.
pub fn preset_mock_responses(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|p| p.0.eq_ignore_ascii_case(name))
        .map(|p| p.2)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
}

impl Preset {
    pub fn regime(&self, regime: &str) -> Result<Vec<NoiseSpec>> {
        let r = regime.to_ascii_lowercase();
        if r == "n0" {
            return Ok(Vec::new());
        }
        self.noise
            .get(&r)
            .cloned()
            .ok_or_else(|| Error::Config(format!("preset {} has no noise regime {regime:?}", self.name)))
    }

    pub fn regimes(&self) -> Vec<String> {
        std::iter::once("n0".to_string()).chain(self.noise.keys().cloned()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchDataset {
    pub control: Table,
    pub test: Table,
    /// Aligned with the rows of `test`.
    pub truth: GroundTruth,
}

fn derive_seed(run_seed: u64, spec_seed: u64) -> u64 {
    run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ spec_seed
}

/// Generates control and test tables for `preset` under a noise regime.
pub fn generate_benchmark(preset: &Preset, regime: &str, n_rows: usize, seed: u64) -> Result<BenchDataset> {
    let base = retarget(&generate_base_table(n_rows, seed)?, &preset.target)?;
    let mut intervention = preset.intervention.clone();
    intervention.seed = derive_seed(seed, intervention.seed);
    let noise: Vec<NoiseSpec> = preset
        .regime(regime)?
        .into_iter()
        .map(|mut s| {
            s.seed = derive_seed(seed, s.seed);
            s
        })
        .collect();
    if preset.noise_first {
        let (control, noise_truth) = inject_noise(&base, &noise)?;
        let (test, iv_truth) = apply_intervention_with_noise(&control, &intervention, Some(&noise_truth.noise))?;
        Ok(BenchDataset {
            control,
            test,
            truth: noise_truth.merged(&iv_truth),
        })
    } else {
        let (clean_test, iv_truth) = apply_intervention(&base, &intervention)?;
        let (test, noise_truth) = inject_noise(&clean_test, &noise)?;
        Ok(BenchDataset {
            control: base,
            test,
            truth: iv_truth.merged(&noise_truth),
        })
    }
}

impl BenchDataset {
    /// Writes `control.csv`, `test.csv` and `truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.control.write_csv(&dir.join("control.csv"))?;
        self.test.write_csv(&dir.join("test.csv"))?;
        self.truth.write_csv(&dir.join("truth.csv"))
    }
}
