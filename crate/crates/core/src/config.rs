//! Declarative run configuration, loaded from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{base_schema, preset, DEFAULT_ROWS};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_MAX_SLICES, DEFAULT_Q_THRESHOLD};
use crate::gbt::GbtConfig;
use crate::noise::NoiseRule;
use crate::pairing::DEFAULT_TOLERANCE;
use crate::pareto::{default_alpha_grid, ClassWeights};
use crate::stats::{AnonymityPolicy, DEFAULT_N_BINS};
use crate::synth::RetryPolicy;
use crate::table::ColumnSchema;

/// Where the control and test tables come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Files {
        control: PathBuf,
        test: PathBuf,
        /// Optional per-row ground truth (`key,intervention_flag,noise_flag[,mechanisms]`).
        #[serde(default)]
        truth: Option<PathBuf>,
        schema: Vec<ColumnSchema>,
    },
    /// A generated benchmark from a shipped preset.
    Bench {
        preset: String,
        #[serde(default = "default_regime")]
        regime: String,
        #[serde(default = "default_rows")]
        n_rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_regime() -> String {
    "n0".into()
}
fn default_rows() -> usize {
    DEFAULT_ROWS
}
fn default_true() -> bool {
    true
}
fn default_bins() -> usize {
    DEFAULT_N_BINS
}
fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_holdout() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Start from the rule set derived from the schema.
    #[serde(default = "default_true")]
    pub default_rules: bool,
    #[serde(default)]
    pub rules: Vec<NoiseRule>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            default_rules: true,
            rules: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Mock,
    /// OpenAI-compatible chat endpoint configured through environment variables.
    Http,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    /// Canned responses for the mock provider. Bench runs fall back to the
    /// preset's own responses.
    #[serde(default)]
    pub responses: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            responses: None,
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }
}

fn default_alpha() -> Vec<f64> {
    default_alpha_grid()
}
fn default_depth() -> usize {
    5
}
fn default_tau() -> f64 {
    0.8
}
fn default_class_weights() -> ClassWeights {
    ClassWeights::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_alpha")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_class_weights")]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub min_leaf_weight: f64,
    #[serde(default)]
    pub weighted_noise_correlation: bool,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            alpha_grid: default_alpha(),
            max_depth: default_depth(),
            class_weights: default_class_weights(),
            min_leaf_weight: 0.0,
            weighted_noise_correlation: false,
            tau: default_tau(),
        }
    }
}

fn default_q() -> f64 {
    DEFAULT_Q_THRESHOLD
}
fn default_max_slices() -> usize {
    DEFAULT_MAX_SLICES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default = "default_q")]
    pub q_threshold: f64,
    #[serde(default = "default_max_slices")]
    pub max_slices: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            q_threshold: default_q(),
            max_slices: default_max_slices(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    /// Relative tolerance of the surrogate shift label.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Explicit policy; otherwise size-adaptive with the schema's
    /// quasi-identifier columns.
    #[serde(default)]
    pub anonymity: Option<AnonymityPolicy>,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub model_c: GbtConfig,
    #[serde(default)]
    pub model_n: GbtConfig,
    /// Share of rows held out to measure the accuracy of the shift model.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    crate::table::validate_schema(schema).map_err(|e| Error::Config(e.to_string()))?;
    if !schema.iter().any(|c| c.role.is_model_input()) {
        return Err(Error::Config("schema has no feature columns".into()));
    }
    Ok(())
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file. Relative paths inside resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Files { control, test, truth, .. } = &mut self.data {
            fix(control);
            fix(test);
            if let Some(t) = truth {
                fix(t);
            }
        }
        if let Some(r) = &mut self.provider.responses {
            fix(r);
        }
        fix(&mut self.output_dir);
    }

    /// A config for a generated benchmark with every other setting at its default.
    pub fn for_bench(preset: &str, regime: &str, n_rows: usize, seed: u64, output_dir: PathBuf) -> Self {
        Self {
            data: DataSource::Bench {
                preset: preset.into(),
                regime: regime.into(),
                n_rows,
                seed,
            },
            tolerance: default_tolerance(),
            anonymity: None,
            n_bins: default_bins(),
            noise: NoiseConfig::default(),
            provider: ProviderConfig::default(),
            model_c: GbtConfig::default(),
            model_n: GbtConfig::default(),
            holdout: default_holdout(),
            search: SearchConfig::default(),
            baseline: BaselineConfig::default(),
            seed,
            output_dir,
        }
    }

    /// The table schema of the run.
    pub fn schema(&self) -> Result<Vec<ColumnSchema>> {
        match &self.data {
            DataSource::Files { schema, .. } => Ok(schema.clone()),
            DataSource::Bench { preset: name, .. } => base_schema(&preset(name)?.target),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.data {
            DataSource::Files { schema, .. } => validate_schema(schema)?,
            DataSource::Bench { preset: name, regime, n_rows, .. } => {
                let p = preset(name)?;
                p.regime(regime)?;
                if *n_rows < 100 {
                    return bad(format!("bench needs at least 100 rows, got {n_rows}"));
                }
            }
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance {} must be a finite value >= 0", self.tolerance));
        }
        if let Some(p) = &self.anonymity {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2".into());
        }
        for (name, c) in [("model_c", &self.model_c), ("model_n", &self.model_n)] {
            c.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad(format!("holdout {} must lie in (0, 1)", self.holdout));
        }
        let s = &self.search;
        if s.alpha_grid.is_empty() || s.alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alpha_grid must be a non-empty list of finite values >= 0".into());
        }
        if s.max_depth == 0 {
            return bad("search.max_depth must be at least 1".into());
        }
        let w = s.class_weights;
        if !(w.zero > 0.0 && w.one > 0.0 && w.zero.is_finite() && w.one.is_finite()) {
            return bad("class weights must be positive".into());
        }
        if !(s.min_leaf_weight >= 0.0) {
            return bad("min_leaf_weight must be >= 0".into());
        }
        if !(s.tau > 0.0 && s.tau <= 1.0) {
            return bad(format!("tau {} must lie in (0, 1]", s.tau));
        }
        if !(0.0..=1.0).contains(&self.baseline.q_threshold) {
            return bad("baseline.q_threshold must lie in [0, 1]".into());
        }
        if self.provider.kind == ProviderKind::Mock
            && self.provider.responses.is_none()
            && matches!(self.data, DataSource::Files { .. })
        {
            return bad("the mock provider needs provider.responses".into());
        }
        Ok(())
    }

    /// Digest of every setting that influences an artifact, plus the content
    /// of any input file. The output directory is not part of it.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical)?);
        let mut files: Vec<&PathBuf> = Vec::new();
        if let DataSource::Files { control, test, truth, .. } = &self.data {
            files.extend([control, test]);
            files.extend(truth.iter());
        }
        files.extend(self.provider.responses.iter());
        for f in files {
            let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
