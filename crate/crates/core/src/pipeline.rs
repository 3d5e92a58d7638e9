//! End-to-end orchestration.
//!
//! Each stage reads what earlier stages wrote to the output directory and
//! records its own artifacts, with their digests, in `manifest.json` under
//! the hash of the run config. A stage refuses to start when an upstream
//! artifact is missing, was produced under a different config, or changed on
//! disk since it was recorded.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{generate_benchmark, preset, preset_mock_responses, GroundTruth};
use crate::config::{DataSource, ProviderKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{render_table, score_with_noise, stats_screen_baseline, EvaluationReport};
use crate::gbt::{accuracy, encode_columns, stratified_split, train_gbt, FeatureMatrix, GbtModel};
use crate::noise::{apply_rules, default_rules};
use crate::pairing::{pair_tables, PairedDataset};
use crate::pareto::{mass_greedy, weighted_tree_search, FitParams, ParetoPoint, SearchParams, Segment, TreeData};
use crate::stats::{schema_context, summarize_table, AnonymityPolicy, InsightSummary};
use crate::synth::{run_synthesis, AuditLog, HttpProvider, MockProvider, Provider, SynthesisRun, Task};
use crate::table::{format_f64, load_csv, Dtype, Role, Table};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const DATA_DIR: &str = "data";
pub const PAIRING: &str = "pairing.json";
pub const NOISE_LABELS: &str = "noise_labels.csv";
pub const INSIGHTS_INTERVENTION: &str = "insights_intervention.json";
pub const INSIGHTS_NOISE: &str = "insights_noise.json";
pub const FEATURES_INTERVENTION: &str = "features_intervention.json";
pub const FEATURES_NOISE: &str = "features_noise.json";
pub const PROVIDER_AUDIT: &str = "provider_audit.jsonl";
pub const MODEL_C: &str = "model_c.json";
pub const MODEL_N: &str = "model_n.json";
pub const TRAINING: &str = "training.json";
pub const SCORES: &str = "scores.csv";
pub const PARETO: &str = "pareto.json";
pub const SEGMENT: &str = "segment.json";
pub const SEGMENT_MASK: &str = "segment_mask.csv";
pub const BASELINE: &str = "baseline.json";
pub const BASELINE_MASK: &str = "baseline_mask.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Target names shown in the insight documents.
pub const SHIFT_TARGET: &str = "shift_indicator";
pub const NOISE_TARGET: &str = "noise_label";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Summarize,
    Synthesize,
    Train,
    Segment,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Summarize, Stage::Synthesize, Stage::Train, Stage::Segment, Stage::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Summarize => "summarize",
            Stage::Synthesize => "synthesize",
            Stage::Train => "train",
            Stage::Segment => "segment",
            Stage::Eval => "eval",
        }
    }

    fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Summarize => None,
            Stage::Synthesize => Some(Stage::Summarize),
            Stage::Train => Some(Stage::Synthesize),
            Stage::Segment => Some(Stage::Train),
            Stage::Eval => Some(Stage::Segment),
        }
    }

    /// The artifact whose absence is reported when this stage has not run.
    fn key_artifact(self) -> &'static str {
        match self {
            Stage::Summarize => INSIGHTS_INTERVENTION,
            Stage::Synthesize => FEATURES_INTERVENTION,
            Stage::Train => MODEL_C,
            Stage::Segment => SEGMENT,
            Stage::Eval => REPORT_JSON,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Permit the HTTP provider. Without it a config selecting it is rejected.
    pub allow_live: bool,
}

/// Artifacts recorded per stage, with their SHA-256 digests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub stages: BTreeMap<Stage, BTreeMap<String, String>>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&read_text(&path)?)?))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(MANIFEST), &serde_json::to_string_pretty(self)?)
    }

    /// Checks that `stage` ran under `hash` and that its files are unchanged.
    fn require(&self, dir: &Path, stage: Stage, hash: &str) -> Result<()> {
        if self.config_hash != hash {
            return Err(Error::StaleArtifact {
                path: dir.join(MANIFEST),
                found: self.config_hash.clone(),
                expected: hash.to_string(),
            });
        }
        let files = self
            .stages
            .get(&stage)
            .ok_or_else(|| Error::MissingArtifact(dir.join(stage.key_artifact())))?;
        for (name, digest) in files {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            let now = sha256_file(&path)?;
            if &now != digest {
                return Err(Error::StaleArtifact {
                    path,
                    found: now,
                    expected: digest.clone(),
                });
            }
        }
        Ok(())
    }

    /// Records `stage` and forgets every later stage.
    fn record(&mut self, dir: &Path, stage: Stage, files: &[&str]) -> Result<()> {
        self.stages.retain(|s, _| *s < stage);
        let mut digests = BTreeMap::new();
        for f in files {
            digests.insert(f.to_string(), sha256_file(&dir.join(f))?);
        }
        self.stages.insert(stage, digests);
        self.save(dir)
    }
}

/// Loaded, paired inputs of a run.
struct Inputs {
    pair: PairedDataset,
    matched: Table,
}

fn data_paths(cfg: &RunConfig) -> (PathBuf, PathBuf, Option<PathBuf>) {
    match &cfg.data {
        DataSource::Files { control, test, truth, .. } => (control.clone(), test.clone(), truth.clone()),
        DataSource::Bench { .. } => {
            let d = cfg.output_dir.join(DATA_DIR);
            (d.join("control.csv"), d.join("test.csv"), Some(d.join("truth.csv")))
        }
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let schema = cfg.schema()?;
    let (c, t, _) = data_paths(cfg);
    for p in [&c, &t] {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.clone()));
        }
    }
    let pair = pair_tables(load_csv(&c, &schema)?, load_csv(&t, &schema)?, cfg.tolerance)?;
    let matched = pair.matched_test();
    Ok(Inputs { pair, matched })
}

fn policy_for(cfg: &RunConfig, table: &Table) -> AnonymityPolicy {
    cfg.anonymity.clone().unwrap_or_else(|| {
        let qi = table
            .schema()
            .iter()
            .filter(|c| c.role == Role::QuasiIdentifier)
            .map(|c| c.name.clone())
            .collect();
        AnonymityPolicy::adaptive(table.n_rows(), qi)
    })
}

fn write_key_flags(path: &Path, header: &str, keys: &[String], flags: &[bool]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", header])?;
    for (k, &f) in keys.iter().zip(flags) {
        w.write_record([k.as_str(), if f { "1" } else { "0" }])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `key,<flag>` CSV written by a segment stage.
pub fn read_mask_csv(path: &Path) -> Result<(Vec<String>, Vec<bool>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let (mut keys, mut mask) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        keys.push(rec[0].to_string());
        mask.push(match &rec[1] {
            "1" => true,
            "0" => false,
            other => return Err(Error::InvalidInput(format!("bad mask flag {other:?}"))),
        });
    }
    Ok((keys, mask))
}

fn read_noise_labels(path: &Path) -> Result<HashMap<String, u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let label = rec[1]
            .parse::<u8>()
            .map_err(|_| Error::InvalidInput(format!("bad noise label {:?}", &rec[1])))?;
        out.insert(rec[0].to_string(), label);
    }
    Ok(out)
}

fn summarize(cfg: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let out = &cfg.output_dir;
    let mut files: Vec<&str> = Vec::new();
    let mut extra_rules = Vec::new();
    if let DataSource::Bench {
        preset: name,
        regime,
        n_rows,
        seed,
    } = &cfg.data
    {
        let p = preset(name)?;
        let data = generate_benchmark(&p, regime, *n_rows, *seed)?;
        data.write(&out.join(DATA_DIR))?;
        extra_rules = p.noise_rules;
        files.extend(["data/control.csv", "data/test.csv", "data/truth.csv"]);
    }
    let Inputs { pair, matched } = load_inputs(cfg)?;
    write_text(&out.join(PAIRING), &serde_json::to_string_pretty(&pair.report())?)?;

    let mut rules = if cfg.noise.default_rules { default_rules(&pair.test) } else { Vec::new() };
    rules.extend(extra_rules);
    rules.extend(cfg.noise.rules.iter().cloned());
    let labels = apply_rules(&pair.test, &rules, &pair.control)?;
    labels.write_csv(&out.join(NOISE_LABELS))?;
    info!(
        "paired {} rows, {} shifted, {} flagged as noisy",
        pair.n_matched(),
        pair.report().shifted,
        labels.n_flagged()
    );

    let policy = policy_for(cfg, &matched);
    let y_n = labels.select(&pair.test_rows);
    let iv = summarize_table(&matched, &pair.surrogate, SHIFT_TARGET, &policy, cfg.n_bins)?;
    let nz = summarize_table(&matched, &y_n, NOISE_TARGET, &policy, cfg.n_bins)?;
    write_text(&out.join(INSIGHTS_INTERVENTION), &iv.to_json())?;
    write_text(&out.join(INSIGHTS_NOISE), &nz.to_json())?;
    files.extend([PAIRING, NOISE_LABELS, INSIGHTS_INTERVENTION, INSIGHTS_NOISE]);
    manifest.record(out, Stage::Summarize, &files)
}

fn build_provider(cfg: &RunConfig, opts: &RunOptions) -> Result<Box<dyn Provider>> {
    match cfg.provider.kind {
        ProviderKind::Mock => match (&cfg.provider.responses, &cfg.data) {
            (Some(path), _) => Ok(Box::new(MockProvider::from_file(path)?)),
            (None, DataSource::Bench { preset, .. }) => {
                Ok(Box::new(MockProvider::from_json(preset_mock_responses(preset)?)?))
            }
            (None, _) => Err(Error::Config("the mock provider needs provider.responses".into())),
        },
        ProviderKind::Http => {
            if !opts.allow_live {
                return Err(Error::Config(
                    "the http provider needs the explicit live opt-in (--allow-live)".into(),
                ));
            }
            Ok(Box::new(HttpProvider::from_env(Duration::from_secs(cfg.provider.timeout_secs))?))
        }
    }
}

fn load_summary(path: &Path) -> Result<InsightSummary> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn synthesize(cfg: &RunConfig, manifest: &mut Manifest, opts: &RunOptions) -> Result<()> {
    let out = &cfg.output_dir;
    let provider = build_provider(cfg, opts)?;
    let audit_path = out.join(PROVIDER_AUDIT);
    if audit_path.exists() {
        std::fs::remove_file(&audit_path).map_err(|e| Error::io(&audit_path, e))?;
    }
    let mut audit = AuditLog::append_to(&audit_path)?;
    for (task, insights, features) in [
        (Task::Intervention, INSIGHTS_INTERVENTION, FEATURES_INTERVENTION),
        (Task::Noise, INSIGHTS_NOISE, FEATURES_NOISE),
    ] {
        let summary = load_summary(&out.join(insights))?;
        let run = run_synthesis(
            provider.as_ref(),
            &summary,
            &summary.schema_context,
            task,
            &cfg.provider.retry,
            &mut audit,
        )?;
        run.save_definitions(&out.join(features))?;
    }
    manifest.record(out, Stage::Synthesize, &[FEATURES_INTERVENTION, FEATURES_NOISE, PROVIDER_AUDIT])
}

/// Encoded model inputs plus the synthesized features of `task`.
fn design_matrix(cfg: &RunConfig, table: &Table, features: &str) -> Result<FeatureMatrix> {
    let names: Vec<String> = table
        .model_input_columns()
        .into_iter()
        .filter(|c| c.dtype != Dtype::Text)
        .map(|c| c.name.clone())
        .collect();
    let mut x = encode_columns(table, &names)?;
    let run = SynthesisRun::from_definitions_json(&read_text(&cfg.output_dir.join(features))?, &schema_context(table))?;
    x.extend(run.features(table)?)?;
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub n_features: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    pub top_features: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub shift: ModelSummary,
    /// Absent when the noise labels hold a single class.
    pub noise: Option<ModelSummary>,
    /// The constant noise probability used in place of a model.
    pub noise_constant: Option<f64>,
}

fn fit_and_score(
    x: &FeatureMatrix,
    y: &[u8],
    cfg: &crate::gbt::GbtConfig,
    holdout: f64,
    seed: u64,
) -> Result<(GbtModel, ModelSummary, Vec<f64>)> {
    let (train, hold) = stratified_split(y, holdout, seed);
    let pick = |rows: &[usize]| rows.iter().map(|&r| y[r]).collect::<Vec<u8>>();
    let model = train_gbt(&x.select_rows(&train), &pick(&train), cfg)?;
    let p = model.predict_proba(x)?;
    let sub = |rows: &[usize]| rows.iter().map(|&r| p[r]).collect::<Vec<f64>>();
    let summary = ModelSummary {
        n_features: x.n_features(),
        n_train: train.len(),
        n_holdout: hold.len(),
        train_accuracy: accuracy(&sub(&train), &pick(&train)),
        holdout_accuracy: accuracy(&sub(&hold), &pick(&hold)),
        top_features: model.ranked_importance().into_iter().take(10).collect(),
    };
    Ok((model, summary, p))
}

fn train(cfg: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let out = &cfg.output_dir;
    let Inputs { pair, matched } = load_inputs(cfg)?;
    let labels = read_noise_labels(&out.join(NOISE_LABELS))?;
    let keys = pair.keys();
    let y_n: Vec<u8> = keys
        .iter()
        .map(|k| labels.get(k).copied().ok_or_else(|| Error::InvalidInput(format!("no noise label for {k:?}"))))
        .collect::<Result<_>>()?;
    let y = &pair.surrogate;
    let shifted = y.iter().filter(|&&v| v == 1).count();
    if shifted == 0 || shifted == y.len() {
        return Err(Error::Model(format!(
            "the shift indicator is constant ({shifted} of {} rows shifted)",
            y.len()
        )));
    }

    let x_c = design_matrix(cfg, &matched, FEATURES_INTERVENTION)?;
    let (model_c, shift, p_c) = fit_and_score(&x_c, y, &cfg.model_c, cfg.holdout, cfg.seed)?;
    write_text(&out.join(MODEL_C), &model_c.to_json())?;
    info!("shift model holdout accuracy {:.4}", shift.holdout_accuracy);

    let flagged = y_n.iter().filter(|&&v| v == 1).count();
    let mut files = vec![MODEL_C, TRAINING, SCORES];
    let (noise, noise_constant, p_n) = if flagged == 0 || flagged == y_n.len() {
        let rate = flagged as f64 / y_n.len() as f64;
        warn!("noise labels hold a single class; using constant noise probability {rate}");
        let stale = out.join(MODEL_N);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        (None, Some(rate), vec![rate; y_n.len()])
    } else {
        let x_n = design_matrix(cfg, &matched, FEATURES_NOISE)?;
        let (model_n, s, p) = fit_and_score(&x_n, &y_n, &cfg.model_n, cfg.holdout, cfg.seed)?;
        write_text(&out.join(MODEL_N), &model_n.to_json())?;
        files.push(MODEL_N);
        (Some(s), None, p)
    };
    let summary = TrainingSummary {
        shift,
        noise,
        noise_constant,
    };
    write_text(&out.join(TRAINING), &serde_json::to_string_pretty(&summary)?)?;

    let path = out.join(SCORES);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["key", "shift", "noise_label", "p_c", "p_n"])?;
    for i in 0..keys.len() {
        w.write_record([
            keys[i].as_str(),
            &y[i].to_string(),
            &y_n[i].to_string(),
            &format_f64(p_c[i]),
            &format_f64(p_n[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    manifest.record(out, Stage::Train, &files)
}

struct Scores {
    keys: Vec<String>,
    shift: Vec<u8>,
    p_c: Vec<f64>,
    p_n: Vec<f64>,
}

fn read_scores(path: &Path) -> Result<Scores> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut s = Scores {
        keys: Vec::new(),
        shift: Vec::new(),
        p_c: Vec::new(),
        p_n: Vec::new(),
    };
    let bad = || Error::InvalidInput(format!("malformed {}", path.display()));
    for rec in r.records() {
        let rec = rec?;
        s.keys.push(rec[0].to_string());
        s.shift.push(rec[1].parse().map_err(|_| bad())?);
        s.p_c.push(rec[3].parse().map_err(|_| bad())?);
        s.p_n.push(rec[4].parse().map_err(|_| bad())?);
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
struct LeafRecord {
    id: usize,
    class: u8,
    n_rows: usize,
    class_mass: [f64; 2],
    mean_p_c: f64,
    mean_p_n: f64,
    rule: String,
}

#[derive(Clone, Debug, Serialize)]
struct ParetoAudit<'a> {
    alpha_star: f64,
    points: &'a [ParetoPoint],
    tree_shape: Vec<String>,
    leaves: Vec<LeafRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentDocument {
    pub alpha_star: f64,
    pub predicate: String,
    #[serde(flatten)]
    pub segment: Segment,
}

fn segment(cfg: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let out = &cfg.output_dir;
    let Inputs { pair, matched } = load_inputs(cfg)?;
    let scores = read_scores(&out.join(SCORES))?;
    if scores.keys != pair.keys() {
        return Err(Error::InvalidInput("scores do not cover the paired rows".into()));
    }
    let columns: Vec<String> = matched
        .model_input_columns()
        .into_iter()
        .filter(|c| c.dtype != Dtype::Text)
        .map(|c| c.name.clone())
        .collect();
    let x = TreeData::from_table(&matched, &columns)?;
    let params = SearchParams {
        fit: FitParams {
            class_weights: cfg.search.class_weights,
            max_depth: cfg.search.max_depth,
            min_leaf_weight: cfg.search.min_leaf_weight,
        },
        weighted_noise_correlation: cfg.search.weighted_noise_correlation,
    };
    let result = weighted_tree_search(&x, &scores.shift, &scores.p_c, &scores.p_n, &cfg.search.alpha_grid, &params)?;
    let seg = mass_greedy(&result.tree, &scores.p_c, cfg.search.tau)?;
    if seg.apply(&matched)? != seg.mask {
        return Err(Error::Model("segment rules do not reproduce the selected rows".into()));
    }
    info!(
        "alpha* = {}, segment of {} rows from {} leaves",
        result.alpha_star(),
        seg.n_rows,
        seg.rules.len()
    );

    let audit = ParetoAudit {
        alpha_star: result.alpha_star(),
        points: &result.points,
        tree_shape: result.tree.shape(),
        leaves: result
            .tree
            .leaves
            .iter()
            .map(|l| LeafRecord {
                id: l.id,
                class: l.class,
                n_rows: l.rows.len(),
                class_mass: l.class_mass,
                mean_p_c: l.stats().mean_p_c,
                mean_p_n: l.stats().mean_p_n,
                rule: l.rule(),
            })
            .collect(),
    };
    write_text(&out.join(PARETO), &serde_json::to_string_pretty(&audit)?)?;
    let doc = SegmentDocument {
        alpha_star: result.alpha_star(),
        predicate: seg.predicate(),
        segment: seg.clone(),
    };
    write_text(&out.join(SEGMENT), &serde_json::to_string_pretty(&doc)?)?;
    write_key_flags(&out.join(SEGMENT_MASK), "in_segment", &scores.keys, &seg.mask)?;

    let summary = load_summary(&out.join(INSIGHTS_INTERVENTION))?;
    let baseline = stats_screen_baseline(&summary, &matched, cfg.baseline.q_threshold, cfg.baseline.max_slices)?;
    write_text(&out.join(BASELINE), &serde_json::to_string_pretty(&baseline)?)?;
    write_key_flags(&out.join(BASELINE_MASK), "in_segment", &scores.keys, &baseline.mask)?;
    manifest.record(out, Stage::Segment, &[PARETO, SEGMENT, SEGMENT_MASK, BASELINE, BASELINE_MASK])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub segment: EvaluationReport,
    pub baseline: EvaluationReport,
}

/// Scores an emitted mask file against ground truth, matching rows by key.
pub fn evaluate_mask(keys: &[String], mask: &[bool], truth: &GroundTruth) -> Result<EvaluationReport> {
    let index: HashMap<&str, usize> = truth.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let rows: Vec<usize> = keys
        .iter()
        .map(|k| {
            index
                .get(k.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("key {k:?} missing from ground truth")))
        })
        .collect::<Result<_>>()?;
    let iv: Vec<bool> = rows.iter().map(|&r| truth.intervention[r]).collect();
    let noise: Vec<bool> = rows.iter().map(|&r| truth.noise[r]).collect();
    let mech: Vec<Vec<String>> = rows.iter().map(|&r| truth.mechanisms[r].clone()).collect();
    score_with_noise(mask, &iv, &noise, &mech)
}

fn eval(cfg: &RunConfig, manifest: &mut Manifest) -> Result<Evaluation> {
    let out = &cfg.output_dir;
    let (_, _, truth_path) = data_paths(cfg);
    let truth_path = truth_path.ok_or_else(|| Error::Config("evaluation needs data.truth".into()))?;
    if !truth_path.exists() {
        return Err(Error::MissingArtifact(truth_path));
    }
    let truth = GroundTruth::read_csv(&truth_path)?;
    let (keys, mask) = read_mask_csv(&out.join(SEGMENT_MASK))?;
    let (bkeys, bmask) = read_mask_csv(&out.join(BASELINE_MASK))?;
    let evaluation = Evaluation {
        segment: evaluate_mask(&keys, &mask, &truth)?,
        baseline: evaluate_mask(&bkeys, &bmask, &truth)?,
    };
    write_text(&out.join(REPORT_JSON), &serde_json::to_string_pretty(&evaluation)?)?;
    let table = render_table(&[("segment", &evaluation.segment), ("stats-screen", &evaluation.baseline)]);
    write_text(&out.join(REPORT_TEXT), &table)?;
    manifest.record(out, Stage::Eval, &[REPORT_JSON, REPORT_TEXT])?;
    Ok(evaluation)
}

fn prepare(cfg: &RunConfig, stage: Stage) -> Result<(Manifest, String)> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let out = &cfg.output_dir;
    if stage == Stage::Summarize {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join(CONFIG), &cfg.to_toml())?;
        let manifest = Manifest {
            config_hash: hash.clone(),
            stages: BTreeMap::new(),
        };
        manifest.save(out)?;
        return Ok((manifest, hash));
    }
    let manifest = Manifest::load(out)?.ok_or_else(|| Error::MissingArtifact(out.join(MANIFEST)))?;
    if let Some(up) = stage.upstream() {
        manifest.require(out, up, &hash)?;
    }
    Ok((manifest, hash))
}

/// Runs one stage from the artifacts of the stages before it. Errors are
/// tagged with the stage name, except configuration errors.
pub fn run_stage(cfg: &RunConfig, stage: Stage, opts: &RunOptions) -> Result<Option<Evaluation>> {
    let (mut manifest, _) = prepare(cfg, stage)?;
    let tag = Error::in_stage(stage.as_str());
    let res = match stage {
        Stage::Summarize => summarize(cfg, &mut manifest).map(|_| None),
        Stage::Synthesize => synthesize(cfg, &mut manifest, opts).map(|_| None),
        Stage::Train => train(cfg, &mut manifest).map(|_| None),
        Stage::Segment => segment(cfg, &mut manifest).map(|_| None),
        Stage::Eval => eval(cfg, &mut manifest).map(Some),
    };
    res.map_err(|e| match e {
        e @ Error::Config(_) => e,
        e => tag(e),
    })
}

/// Runs every stage in order; evaluation runs when ground truth is available.
pub fn run_pipeline(cfg: &RunConfig, opts: &RunOptions) -> Result<Option<Evaluation>> {
    for stage in [Stage::Summarize, Stage::Synthesize, Stage::Train, Stage::Segment] {
        run_stage(cfg, stage, opts)?;
    }
    match data_paths(cfg).2 {
        Some(_) => run_stage(cfg, Stage::Eval, opts),
        None => Ok(None),
    }
}
