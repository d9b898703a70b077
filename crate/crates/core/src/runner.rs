//! Experiment orchestration: configuration, scenario execution, artifact
//! caching, and report output.
//!
//! A configuration names a manifest plus a list of scenarios. Each scenario
//! runs the training pipeline (split, optional stratified augmentation,
//! optional explicit-background class, feature extraction, forest training)
//! once, then produces one report per enabled evaluation mode: plain,
//! adversarial, background-only. Scenario failures are isolated; the run
//! summary records them and the remaining scenarios proceed.
//!
//! Every randomized stage draws from a stream derived from (global seed,
//! scenario seed, purpose tag), so toggling one evaluation flag never
//! changes training artifacts. Identical config and data give byte-identical
//! artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::AudioClip;
use crate::augment::{
    plan_adversarial, plan_stratified, plan_to_csv, realize_plan, realize_plan_cached, MixKind,
    MixPlan,
};
use crate::dataset::{
    load_clips, load_manifest, split_scenario, ClipRecord, DatasetManifest, ScenarioSpec,
    BACKGROUND_LABEL,
};
use crate::dsp::{log_mel_spectrogram, mel_to_csv, MelFilterbank, MelSpectrogram, HOP, FRAME_LEN, LOG_EPSILON, N_BANDS};
use crate::error::{Error, Result};
use crate::eval::{
    background_only_diagnostic, binary_auc, macro_auc, probabilities_csv, rmse_shift, DefaultsEcho,
    EvalMode, EvaluationReport, REPORT_SCHEMA_VERSION,
};
use crate::featlearn::{
    fit_codebook, learned_clip_features, mel_clip_features, Codebook, FeatLearnParams, FeatureKind,
};
use crate::forest::{predict_detection, predict_proba, train_forest, ForestModel, ForestParams};
use crate::rng::{derive_seed, derive_seed_indexed};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the artifact cache directory.
pub const CACHE_DIR_ENV: &str = "AAII_CACHE_DIR";

fn default_gain() -> f32 {
    crate::augment::DEFAULT_MIX_GAIN
}

fn default_true() -> bool {
    true
}

/// A full experiment: dataset, pipeline parameters, and scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Path to manifest.csv.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Global seed; per-scenario streams derive from this plus the
    /// scenario's own seed.
    #[serde(default)]
    pub seed: u64,
    /// Per-source mix gain.
    #[serde(default = "default_gain")]
    pub gain: f32,
    /// Whether the stratified training set keeps the unmixed originals
    /// alongside the K-1 mixtures per item.
    #[serde(default = "default_true")]
    pub stratified_includes_originals: bool,
    /// Optional mixture cache directory (`<sha256>.wav` files).
    #[serde(default)]
    pub mixcache: Option<PathBuf>,
    #[serde(default)]
    pub featlearn: FeatLearnParams,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioSpec>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            message: format!("experiment config: {e}"),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a config file; `manifest`, `out_dir`, and `mixcache` resolve
    /// relative to the config file's directory.
    pub fn from_toml_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let rebase = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        config.manifest = rebase(&config.manifest);
        config.out_dir = rebase(&config.out_dir);
        config.mixcache = config.mixcache.as_ref().map(&rebase);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config {
                message: "config has no scenarios".into(),
            });
        }
        let mut names = BTreeSet::new();
        for scenario in &self.scenarios {
            scenario.validate()?;
            if !names.insert(scenario.name.as_str()) {
                return Err(Error::Config {
                    message: format!("duplicate scenario name `{}`", scenario.name),
                });
            }
        }
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::Config {
                message: format!("gain must be in (0, 1], got {}", self.gain),
            });
        }
        self.featlearn.validate()?;
        self.forest.validate()?;
        Ok(())
    }

    /// Hash of the fully resolved configuration; echoed into every report.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_sha256(json.as_bytes())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Result of validating a manifest and probing its audio.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestSummary {
    pub individuals: usize,
    pub clips: usize,
    pub foreground_clips: usize,
    pub background_clips: usize,
    pub sample_rate: u32,
    pub first_date: String,
    pub last_date: String,
}

/// Load a manifest, probe every clip, and summarize.
pub fn validate_manifest(path: &Path) -> Result<ManifestSummary> {
    let mut manifest = load_manifest(path)?;
    let rate = manifest.probe_audio()?;
    let fg = manifest
        .records
        .iter()
        .filter(|r| r.role == crate::dataset::Role::Foreground)
        .count();
    let dates: Vec<_> = manifest.records.iter().map(|r| r.date).collect();
    Ok(ManifestSummary {
        individuals: manifest.individuals.len(),
        clips: manifest.records.len(),
        foreground_clips: fg,
        background_clips: manifest.records.len() - fg,
        sample_rate: rate,
        first_date: dates.iter().min().unwrap().format("%Y-%m-%d").to_string(),
        last_date: dates.iter().max().unwrap().format("%Y-%m-%d").to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRunStatus {
    pub name: String,
    pub ok: bool,
    #[serde(default)]
    pub error: Option<String>,
    pub report_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_fingerprint: String,
    pub scenarios: Vec<ScenarioRunStatus>,
}

/// Everything a finished run hands back to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<EvaluationReport>,
    pub summary: RunSummary,
}

struct ScenarioContext<'a> {
    config: &'a ExperimentConfig,
    manifest: &'a DatasetManifest,
    fingerprint: String,
    /// Dump per-clip log-mel CSVs here when set.
    dump_mel_dir: Option<PathBuf>,
}

struct LabeledClip {
    clip: AudioClip,
    label: String,
    id: String,
}

/// Training artifacts shared by every evaluation mode of one scenario.
struct TrainedStage {
    model: ForestModel,
    codebook: Option<Codebook>,
    feature_kind: FeatureKind,
    n_train_items: usize,
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CachedStageMeta {
    n_train_items: usize,
    warnings: Vec<String>,
    feature_kind: FeatureKind,
}

/// Run every scenario; failures are recorded per scenario, not propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    run_experiment_with_options(config, None)
}

/// `run_experiment` plus an optional directory for log-mel CSV dumps.
pub fn run_experiment_with_options(
    config: &ExperimentConfig,
    dump_mel_dir: Option<&Path>,
) -> Result<RunOutcome> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    if let Some(dir) = dump_mel_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let ctx = ScenarioContext {
        config,
        manifest: &manifest,
        fingerprint: config.fingerprint(),
        dump_mel_dir: dump_mel_dir.map(Path::to_path_buf),
    };

    let mut reports = Vec::new();
    let mut statuses = Vec::new();
    for scenario in &config.scenarios {
        match run_scenario(&ctx, scenario) {
            Ok(scenario_reports) => {
                let files = scenario_reports
                    .iter()
                    .map(|r| format!("{}/report_{}.json", scenario.name, r.mode.as_str()))
                    .collect();
                statuses.push(ScenarioRunStatus {
                    name: scenario.name.clone(),
                    ok: true,
                    error: None,
                    report_files: files,
                });
                reports.extend(scenario_reports);
            }
            Err(e) => statuses.push(ScenarioRunStatus {
                name: scenario.name.clone(),
                ok: false,
                error: Some(e.to_string()),
                report_files: vec![],
            }),
        }
    }

    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config_fingerprint: ctx.fingerprint.clone(),
        scenarios: statuses,
    };
    let summary_json = format!(
        "{}\n",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    let summary_path = config.out_dir.join("run_summary.json");
    fs::write(&summary_path, summary_json).map_err(|e| Error::io(&summary_path, e))?;

    Ok(RunOutcome { reports, summary })
}

fn scenario_seed(config: &ExperimentConfig, scenario: &ScenarioSpec) -> u64 {
    derive_seed_indexed(config.seed, "scenario", scenario.seed)
}

fn scenario_dir(config: &ExperimentConfig, scenario: &ScenarioSpec) -> PathBuf {
    config.out_dir.join(&scenario.name)
}

fn write_artifact(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_log_mels(
    clips: &[LabeledClip],
    fb: &MelFilterbank,
    dump_dir: Option<&Path>,
) -> Result<Vec<MelSpectrogram>> {
    let results: Vec<Result<MelSpectrogram>> = clips
        .par_iter()
        .map(|lc| log_mel_spectrogram(&lc.clip, fb, &lc.id))
        .collect();
    let mels = results.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(dir) = dump_dir {
        for mel in &mels {
            let stem: String = mel
                .clip_id
                .chars()
                .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            write_artifact(&dir.join(format!("{stem}.mel.csv")), &mel_to_csv(mel))?;
        }
    }
    Ok(mels)
}

fn to_features(
    mels: &[MelSpectrogram],
    kind: FeatureKind,
    codebook: Option<&Codebook>,
) -> Result<Vec<Vec<f64>>> {
    let results: Vec<Result<Vec<f64>>> = mels
        .par_iter()
        .map(|mel| match kind {
            FeatureKind::Mel => mel_clip_features(mel).map(|f| f.values),
            FeatureKind::Learned => {
                let cb = codebook.expect("codebook present for learned features");
                learned_clip_features(mel, cb).map(|f| f.values)
            }
        })
        .collect();
    results.into_iter().collect()
}

fn load_labeled(
    base: &Path,
    records: &[ClipRecord],
    expected_rate: &mut Option<u32>,
) -> Result<Vec<LabeledClip>> {
    let clips = load_clips(base, records, expected_rate)?;
    Ok(records
        .iter()
        .zip(clips)
        .map(|(r, clip)| LabeledClip {
            clip,
            label: r.individual.clone(),
            id: r.path.clone(),
        })
        .collect())
}

fn realize(
    ctx: &ScenarioContext,
    plan: &MixPlan,
    base: &Path,
) -> Result<Vec<LabeledClip>> {
    let gain = ctx.config.gain;
    let (mixes, _clamped) = match &ctx.config.mixcache {
        Some(cache) => realize_plan_cached(plan, gain, base, cache)?,
        None => realize_plan(plan, gain, base)?,
    };
    Ok(plan
        .entries
        .iter()
        .zip(mixes)
        .map(|(entry, mix)| LabeledClip {
            clip: mix.clip,
            label: mix.label,
            id: format!("mix:{}+{}", entry.foreground.path, entry.background.path),
        })
        .collect())
}

fn cache_root(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => config.out_dir.join("cache"),
    }
}

/// Key over everything the trained stage depends on: training audio bytes
/// and labels, the training-side scenario flags, and pipeline parameters.
/// Evaluation-only flags are deliberately absent so toggling them reuses
/// the cached model.
fn train_cache_key(
    ctx: &ScenarioContext,
    scenario: &ScenarioSpec,
    train_records: &[ClipRecord],
    seed: u64,
) -> Result<String> {
    let config = ctx.config;
    let mut hasher = Sha256::new();
    for record in train_records {
        let path = crate::dataset::resolve_clip_path(&ctx.manifest.base_dir, record);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(record.individual.as_bytes());
        hasher.update([record.role as u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.update([
        scenario.use_stratified_augmentation as u8,
        scenario.use_explicit_background as u8,
        scenario.use_feature_learning as u8,
        config.stratified_includes_originals as u8,
    ]);
    hasher.update(config.gain.to_le_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(serde_json::to_string(&config.featlearn).unwrap().as_bytes());
    hasher.update(
        serde_json::to_string(&ForestParams {
            seed: 0,
            ..config.forest.clone()
        })
        .unwrap()
        .as_bytes(),
    );
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn load_cached_stage(dir: &Path) -> Option<TrainedStage> {
    let meta: CachedStageMeta =
        serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).ok()?).ok()?;
    let model = ForestModel::from_json(&fs::read_to_string(dir.join("model.json")).ok()?).ok()?;
    let codebook = match meta.feature_kind {
        FeatureKind::Learned => {
            Some(Codebook::from_json(&fs::read_to_string(dir.join("codebook.json")).ok()?).ok()?)
        }
        FeatureKind::Mel => None,
    };
    Some(TrainedStage {
        model,
        codebook,
        feature_kind: meta.feature_kind,
        n_train_items: meta.n_train_items,
        warnings: meta.warnings,
    })
}

fn store_cached_stage(dir: &Path, stage: &TrainedStage) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_artifact(&dir.join("model.json"), &stage.model.to_json())?;
    if let Some(cb) = &stage.codebook {
        write_artifact(&dir.join("codebook.json"), &cb.to_json())?;
    }
    let meta = CachedStageMeta {
        n_train_items: stage.n_train_items,
        warnings: stage.warnings.clone(),
        feature_kind: stage.feature_kind,
    };
    // meta.json last: its presence marks the entry complete
    write_artifact(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
}

fn train_stage(
    ctx: &ScenarioContext,
    scenario: &ScenarioSpec,
    train_fg: &[ClipRecord],
    train_bg: &[ClipRecord],
    seed: u64,
    expected_rate: &mut Option<u32>,
    out_dir: &Path,
) -> Result<TrainedStage> {
    let config = ctx.config;
    let base = &ctx.manifest.base_dir;
    let mut warnings = Vec::new();

    // one-shot check: at least two classes will exist
    let owners: BTreeSet<&str> = train_fg.iter().map(|r| r.individual.as_str()).collect();
    if owners.len() < 2 {
        return Err(Error::SingleClass { found: owners.len() });
    }

    let mut train_records: Vec<ClipRecord> = train_fg.to_vec();
    train_records.extend(train_bg.iter().cloned());
    let cache_key = train_cache_key(ctx, scenario, &train_records, seed)?;
    let cache_dir = cache_root(config).join(&cache_key);
    if let Some(stage) = load_cached_stage(&cache_dir) {
        // artifacts still belong in the scenario directory
        write_artifact(&out_dir.join("model.json"), &stage.model.to_json())?;
        if let Some(cb) = &stage.codebook {
            write_artifact(&out_dir.join("codebook.json"), &cb.to_json())?;
        }
        if scenario.use_stratified_augmentation {
            let plan = plan_stratified(train_fg, train_bg, seed)?;
            write_artifact(&out_dir.join("plan_stratified.csv"), &plan_to_csv(&plan))?;
        }
        return Ok(stage);
    }

    // assemble the training clip set
    let mut training: Vec<LabeledClip> = Vec::new();
    let originals = load_labeled(base, train_fg, expected_rate)?;
    let keep_originals = !scenario.use_stratified_augmentation || config.stratified_includes_originals;
    if keep_originals {
        training.extend(originals);
    }
    if scenario.use_stratified_augmentation {
        let plan = plan_stratified(train_fg, train_bg, seed)?;
        write_artifact(&out_dir.join("plan_stratified.csv"), &plan_to_csv(&plan))?;
        training.extend(realize(ctx, &plan, base)?);
    }
    let n_foreground_derived = training.len();

    if scenario.use_explicit_background {
        let bg = load_labeled(base, train_bg, expected_rate)?;
        training.extend(bg.into_iter().map(|mut lc| {
            lc.label = BACKGROUND_LABEL.to_string();
            lc
        }));
    }

    let rate = training
        .first()
        .map(|lc| lc.clip.sample_rate)
        .ok_or_else(|| Error::EmptyInput {
            context: "training set".into(),
        })?;
    let fb = MelFilterbank::new(rate)?;
    let mels = to_log_mels(&training, &fb, ctx.dump_mel_dir.as_deref())?;

    let (feature_kind, codebook) = if scenario.use_feature_learning {
        // the codebook sees only foreground-derived material (originals and
        // mixtures), never the explicit-background clips
        let (cb, cb_warnings) = fit_codebook(
            &mels[..n_foreground_derived],
            &config.featlearn,
            derive_seed(seed, "codebook"),
        )?;
        warnings.extend(cb_warnings);
        write_artifact(&out_dir.join("codebook.json"), &cb.to_json())?;
        (FeatureKind::Learned, Some(cb))
    } else {
        (FeatureKind::Mel, None)
    };

    let features = to_features(&mels, feature_kind, codebook.as_ref())?;
    let labels: Vec<String> = training.iter().map(|lc| lc.label.clone()).collect();
    let forest_params = ForestParams {
        seed: derive_seed(seed, "forest"),
        ..config.forest.clone()
    };
    let model = train_forest(&features, &labels, &forest_params)?;
    write_artifact(&out_dir.join("model.json"), &model.to_json())?;

    let stage = TrainedStage {
        model,
        codebook,
        feature_kind,
        n_train_items: training.len(),
        warnings,
    };
    store_cached_stage(&cache_dir, &stage)?;
    Ok(stage)
}

fn defaults_echo(ctx: &ScenarioContext, stage: &TrainedStage) -> DefaultsEcho {
    let config = ctx.config;
    DefaultsEcho {
        mix_gain: config.gain as f64,
        stratified_includes_originals: config.stratified_includes_originals,
        frame_len: FRAME_LEN,
        hop: HOP,
        n_bands: N_BANDS,
        window: "hamming-symmetric".into(),
        mel_scale: "htk".into(),
        mel_f_min: 0.0,
        mel_f_max: f64::NAN, // set per report once the rate is known
        median_scope: "per-band-full-clip".into(),
        log_epsilon: LOG_EPSILON,
        patch_width: config.featlearn.patch_width,
        codebook_size: config.featlearn.codebook_size,
        variance_keep: config.featlearn.variance_keep,
        patch_sample_cap: config.featlearn.sample_cap,
        kmeans_max_iter: config.featlearn.max_iter,
        kmeans_tol: config.featlearn.tol,
        n_trees: config.forest.n_trees,
        min_leaf: config.forest.min_leaf,
        mtry: config
            .forest
            .mtry
            .unwrap_or_else(|| (stage.model.feature_dim as f64).sqrt().ceil() as usize),
        auc_tie_rule: "ties-count-half".into(),
        auc_aggregation: "one-vs-rest-macro".into(),
    }
}

fn run_scenario(ctx: &ScenarioContext, scenario: &ScenarioSpec) -> Result<Vec<EvaluationReport>> {
    let config = ctx.config;
    let base = &ctx.manifest.base_dir;
    let seed = scenario_seed(config, scenario);
    let out_dir = scenario_dir(config, scenario);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let split = split_scenario(ctx.manifest, scenario)?;
    let train_fg = split.train_foreground();
    let train_bg = split.train_background();
    let eval_fg = split.eval_foreground();
    let eval_bg = split.eval_background();

    let mut expected_rate: Option<u32> = None;
    let stage = train_stage(
        ctx,
        scenario,
        &train_fg,
        &train_bg,
        seed,
        &mut expected_rate,
        &out_dir,
    )?;

    if eval_fg.is_empty() {
        return Err(Error::EmptyInput {
            context: format!("scenario `{}` evaluation foreground set", scenario.name),
        });
    }

    let eval_fg_clips = load_labeled(base, &eval_fg, &mut expected_rate)?;
    let rate = eval_fg_clips[0].clip.sample_rate;
    let fb = MelFilterbank::new(rate)?;

    let need_eval_bg = scenario.adversarial_eval
        || scenario.background_only_eval
        || scenario.use_explicit_background;
    let eval_bg_clips = if need_eval_bg {
        load_labeled(base, &eval_bg, &mut expected_rate)?
    } else {
        Vec::new()
    };

    let mut defaults = defaults_echo(ctx, &stage);
    defaults.mel_f_max = rate as f64 / 2.0;

    let features_of = |clips: &[LabeledClip]| -> Result<Vec<Vec<f64>>> {
        let mels = to_log_mels(clips, &fb, ctx.dump_mel_dir.as_deref())?;
        to_features(&mels, stage.feature_kind, stage.codebook.as_ref())
    };

    let base_report = |mode: EvalMode, n_eval: usize| EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.clone(),
        mode,
        feature_kind: stage.feature_kind,
        classes: stage.model.classes.clone(),
        n_train_items: stage.n_train_items,
        n_eval_items: n_eval,
        per_class_auc: Default::default(),
        macro_auc: 0.0,
        detection_auc: None,
        rmse_shift: None,
        skipped_classes: vec![],
        excluded_individuals: split.excluded_individuals.clone(),
        warnings: split.warnings.iter().chain(&stage.warnings).cloned().collect(),
        probabilities_csv: format!("probs_{}.csv", mode.as_str()),
        sample_rate: rate,
        defaults: defaults.clone(),
        config_fingerprint: ctx.fingerprint.clone(),
    };

    let mut reports = Vec::new();

    // plain evaluation
    let eval_features = features_of(&eval_fg_clips)?;
    let eval_truth: Vec<String> = eval_fg_clips.iter().map(|c| c.label.clone()).collect();
    let plain_probs = predict_proba(&stage.model, &eval_features)?;
    let plain_macro = macro_auc(&plain_probs, &eval_truth)?;

    let detection_auc = if scenario.use_explicit_background {
        let bg_features = features_of(&eval_bg_clips)?;
        let mut all_features = eval_features.clone();
        all_features.extend(bg_features);
        let scores = predict_detection(&stage.model, &all_features)?;
        let truth: Vec<bool> = (0..eval_fg_clips.len())
            .map(|_| true)
            .chain((0..eval_bg_clips.len()).map(|_| false))
            .collect();
        Some(binary_auc(&scores, &truth)?)
    } else {
        None
    };

    let mut plain_report = base_report(EvalMode::Plain, eval_fg_clips.len());
    plain_report.per_class_auc = plain_macro.per_class;
    plain_report.macro_auc = plain_macro.macro_auc;
    plain_report.skipped_classes = plain_macro.skipped_classes;
    plain_report.detection_auc = detection_auc;
    let eval_paths: Vec<String> = eval_fg_clips.iter().map(|c| c.id.clone()).collect();
    write_artifact(
        &out_dir.join("probs_plain.csv"),
        &probabilities_csv(&plain_probs, &eval_paths, &eval_truth),
    )?;
    write_artifact(&out_dir.join("report_plain.json"), &plain_report.to_json())?;
    reports.push(plain_report);

    // adversarial evaluation compares against the plain probabilities of
    // the same items in the same order
    if scenario.adversarial_eval {
        let plan = plan_adversarial(&eval_fg, &eval_bg, seed)?;
        write_artifact(&out_dir.join("plan_adversarial.csv"), &plan_to_csv(&plan))?;
        let mixed = realize(ctx, &plan, base)?;
        let mixed_features = features_of(&mixed)?;
        let adv_probs = predict_proba(&stage.model, &mixed_features)?;
        let adv_macro = macro_auc(&adv_probs, &eval_truth)?;
        let shift = rmse_shift(&adv_probs, &plain_probs)?;

        let mut report = base_report(EvalMode::Adversarial, mixed.len());
        report.per_class_auc = adv_macro.per_class;
        report.macro_auc = adv_macro.macro_auc;
        report.skipped_classes = adv_macro.skipped_classes;
        report.rmse_shift = Some(shift);
        write_artifact(
            &out_dir.join("probs_adversarial.csv"),
            &probabilities_csv(&adv_probs, &eval_paths, &eval_truth),
        )?;
        write_artifact(&out_dir.join("report_adversarial.json"), &report.to_json())?;
        reports.push(report);
    }

    // background-only diagnostic: chance-level macro AUC is the healthy
    // outcome
    if scenario.background_only_eval {
        if eval_bg_clips.is_empty() {
            return Err(Error::EmptyInput {
                context: format!("scenario `{}` evaluation background set", scenario.name),
            });
        }
        let bg_features = features_of(&eval_bg_clips)?;
        let bg_truth: Vec<String> = eval_bg_clips.iter().map(|c| c.label.clone()).collect();
        let diag = background_only_diagnostic(&stage.model, &bg_features, &bg_truth)?;

        let mut report = base_report(EvalMode::BackgroundOnly, eval_bg_clips.len());
        report.per_class_auc = diag.per_class;
        report.macro_auc = diag.macro_auc;
        report.skipped_classes = diag.skipped_classes;
        let bg_probs = predict_proba(&stage.model, &bg_features)?;
        let bg_paths: Vec<String> = eval_bg_clips.iter().map(|c| c.id.clone()).collect();
        write_artifact(
            &out_dir.join("probs_background_only.csv"),
            &probabilities_csv(&bg_probs, &bg_paths, &bg_truth),
        )?;
        write_artifact(
            &out_dir.join("report_background_only.json"),
            &report.to_json(),
        )?;
        reports.push(report);
    }

    for report in &reports {
        report.validate()?;
    }
    Ok(reports)
}

/// Build (without realizing) the requested plan for one scenario; backs the
/// `mixplan` CLI command.
pub fn build_mixplan(
    config: &ExperimentConfig,
    scenario_name: &str,
    kind: MixKind,
) -> Result<MixPlan> {
    let scenario = config
        .scenarios
        .iter()
        .find(|s| s.name == scenario_name)
        .ok_or_else(|| Error::Config {
            message: format!("no scenario named `{scenario_name}` in config"),
        })?;
    let manifest = load_manifest(&config.manifest)?;
    let split = split_scenario(&manifest, scenario)?;
    let seed = scenario_seed(config, scenario);
    match kind {
        MixKind::Stratified => {
            plan_stratified(&split.train_foreground(), &split.train_background(), seed)
        }
        MixKind::Adversarial => {
            plan_adversarial(&split.eval_foreground(), &split.eval_background(), seed)
        }
    }
}
