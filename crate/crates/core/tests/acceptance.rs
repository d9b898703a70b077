//! Acceptance suite. Each test prints one pass/fail line.
//!
//! Criteria:
//! 1. binary AUC matches an exhaustive pair-counting oracle exactly.
//! 2. stratified training-set size law (factor K).
//! 3. adversarial evaluation-set size preservation, over 50 seeds.
//! 4. planted confound is detected by the background-only diagnostic.
//! 5. stratified augmentation + learned features mitigate the confound
//!    (adversarial probability shift at least halved, foreground accuracy
//!    held within 0.05).
//! 6. null dataset behaves at chance.
//! 7. numerical invariants (unit norms, monotone objectives, probability
//!    row sums, AUC transform invariance, whitening variance, STFT shape,
//!    end-to-end determinism).
//! 8. (optional, ignored by default) reproduction on the published field
//!    recordings; see README for how to enable it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aaii_core::augment::{plan_adversarial, plan_stratified, realize_plan};
use aaii_core::dataset::{load_manifest, split_scenario, MissingIndividualPolicy, ScenarioSpec, SplitRule};
use aaii_core::dsp::{frame_count, stft_magnitude, MelFilterbank, log_mel_spectrogram};
use aaii_core::eval::{binary_auc, EvalMode};
use aaii_core::featlearn::{extract_patches, fit_codebook, fit_whitener, spherical_kmeans, FeatLearnParams};
use aaii_core::forest::{predict_proba, train_forest, ForestParams};
use aaii_core::matrix::norm;
use aaii_core::runner::{run_experiment, ExperimentConfig};
use aaii_core::synthgen::{generate, SynthSpec};
use aaii_core::AudioClip;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    println!(
        "acceptance criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Exhaustive pair-counting AUC: ties count one half.
fn auc_pair_oracle(scores: &[f64], truth: &[bool]) -> f64 {
    let mut concordant = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &pos) in truth.iter().enumerate() {
        if !pos {
            continue;
        }
        for (j, &neg) in truth.iter().enumerate() {
            if neg {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

#[test]
fn acceptance_1_auc_matches_pair_counting_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    let mut checked = 0usize;
    while checked < 1000 {
        let n = rng.gen_range(2..=200);
        // coarse grids inject plenty of ties; occasional continuous scores
        let grid: u32 = rng.gen_range(2..30);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.8) {
                    rng.gen_range(0..grid) as f64 / grid as f64
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let n_pos = truth.iter().filter(|&&t| t).count();
        if n_pos == 0 || n_pos == n {
            continue;
        }
        let fast = binary_auc(&scores, &truth).unwrap();
        let slow = auc_pair_oracle(&scores, &truth);
        assert_eq!(
            fast, slow,
            "instance {checked}: rank-based {fast} != pair-counted {slow}"
        );
        checked += 1;
    }
    let elapsed = started.elapsed();
    let pass = elapsed.as_secs_f64() < 10.0;
    verdict(
        1,
        pass,
        &format!("1000 instances bit-exact in {:.2} s", elapsed.as_secs_f64()),
    );
    assert!(pass, "runtime budget exceeded: {elapsed:?}");
}

fn synth_dataset(dir: &Path, k: usize, clips_per_role: usize, duration_s: f64, confound: f64, signature: f64, seed: u64) -> PathBuf {
    let spec = SynthSpec {
        k,
        clips_per_role,
        duration_s,
        sample_rate: 16000,
        confound_strength: confound,
        signature_strength: signature,
        seed,
    };
    generate(&spec, dir).unwrap();
    dir.join("manifest.csv")
}

fn by_year_scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        split_rule: SplitRule::ByYear,
        train_limit_per_individual: None,
        use_explicit_background: false,
        use_stratified_augmentation: false,
        use_feature_learning: false,
        adversarial_eval: false,
        background_only_eval: false,
        seed: 0,
        on_missing_individual: MissingIndividualPolicy::Exclude,
    }
}

#[test]
fn acceptance_2_stratified_size_law() {
    let dir = tempfile::tempdir().unwrap();
    // 40 clips per role split evenly over two years: 20 foreground
    // training clips per individual under the by-year rule
    let manifest_path = synth_dataset(dir.path(), 5, 40, 1.0, 0.5, 0.5, 2_001);
    let manifest = load_manifest(&manifest_path).unwrap();
    let split = split_scenario(&manifest, &by_year_scenario("size-law")).unwrap();
    let train_fg = split.train_foreground();
    let train_bg = split.train_background();
    assert_eq!(train_fg.len(), 100, "expected 20 x 5 foreground training clips");

    let plan = plan_stratified(&train_fg, &train_bg, 7).unwrap();
    let (mixtures, clamped) = realize_plan(&plan, 0.5, &manifest.base_dir).unwrap();
    let training_set_size = train_fg.len() + mixtures.len();

    let pass = training_set_size == 500 && clamped == 0;
    verdict(
        2,
        pass,
        &format!(
            "originals {} + mixtures {} = {training_set_size} (want 500), clamped samples {clamped}",
            train_fg.len(),
            mixtures.len()
        ),
    );
    assert_eq!(training_set_size, 500);
    assert_eq!(clamped, 0);
}

#[test]
fn acceptance_3_adversarial_size_law_over_50_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth_dataset(dir.path(), 5, 20, 1.0, 0.5, 0.5, 3_001);
    let manifest = load_manifest(&manifest_path).unwrap();
    let split = split_scenario(&manifest, &by_year_scenario("adv-law")).unwrap();
    let eval_fg = split.eval_foreground();
    let eval_bg = split.eval_background();
    assert!(!eval_fg.is_empty());

    for seed in 0..50u64 {
        let plan = plan_adversarial(&eval_fg, &eval_bg, seed).unwrap();
        assert_eq!(
            plan.entries.len(),
            eval_fg.len(),
            "seed {seed}: evaluation set size changed"
        );
        for (entry, fg) in plan.entries.iter().zip(&eval_fg) {
            assert_eq!(entry.foreground.path, fg.path, "seed {seed}: item order changed");
            assert_ne!(
                entry.background.individual, entry.foreground.individual,
                "seed {seed}: own-background pairing"
            );
        }
    }
    verdict(
        3,
        true,
        &format!(
            "50 seeds: size stayed {} and no plan pairs an individual with its own background",
            eval_fg.len()
        ),
    );
}

/// Acceptance pipeline parameters: forest at its defaults, codebook sized
/// for desk-scale runtime (the full 500-centroid default is a field-data
/// setting; both are plain config values echoed into reports).
fn acceptance_config(manifest: &Path, out_dir: &Path, scenarios: Vec<ScenarioSpec>) -> ExperimentConfig {
    ExperimentConfig {
        manifest: manifest.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        seed: 42,
        gain: 0.5,
        stratified_includes_originals: true,
        mixcache: None,
        featlearn: FeatLearnParams {
            codebook_size: 64,
            sample_cap: 20_000,
            ..Default::default()
        },
        forest: ForestParams::default(),
        scenarios,
    }
}

#[test]
fn acceptance_4_confound_detection() {
    let started = Instant::now();
    let mut diagnostics = Vec::new();
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 5, 20, 2.0, 1.0, 0.6, 40_000 + seed);
        let out = tempfile::tempdir().unwrap();
        let mut scenario = by_year_scenario("confounded-baseline");
        scenario.background_only_eval = true;
        scenario.seed = seed;
        let config = acceptance_config(&manifest, out.path(), vec![scenario]);
        let outcome = run_experiment(&config).unwrap();
        let bg_report = outcome
            .reports
            .iter()
            .find(|r| r.mode == EvalMode::BackgroundOnly)
            .expect("background-only report");
        diagnostics.push(bg_report.macro_auc);
    }
    let mean = diagnostics.iter().sum::<f64>() / diagnostics.len() as f64;
    let elapsed = started.elapsed().as_secs_f64();
    let pass = mean >= 0.75 && elapsed < 180.0;
    verdict(
        4,
        pass,
        &format!(
            "background-only macro AUC mean {mean:.4} over 5 seeds (threshold 0.75; per-seed {:?}) in {elapsed:.1} s",
            diagnostics.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
    assert!(mean >= 0.75, "confound went undetected: mean {mean}");
    assert!(elapsed < 180.0, "runtime budget exceeded: {elapsed} s");
}

#[test]
fn acceptance_5_confound_mitigation() {
    let started = Instant::now();
    let mut baseline_rmse = Vec::new();
    let mut improved_rmse = Vec::new();
    let mut baseline_auc = Vec::new();
    let mut improved_auc = Vec::new();

    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 5, 20, 2.0, 1.0, 0.6, 50_000 + seed);
        let out = tempfile::tempdir().unwrap();

        let mut baseline = by_year_scenario("baseline");
        baseline.adversarial_eval = true;
        baseline.seed = seed;
        let mut improved = by_year_scenario("improved");
        improved.use_stratified_augmentation = true;
        improved.use_feature_learning = true;
        improved.adversarial_eval = true;
        improved.seed = seed;

        let config = acceptance_config(&manifest, out.path(), vec![baseline, improved]);
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.summary.scenarios.iter().all(|s| s.ok));

        let find = |name: &str, mode: EvalMode| {
            outcome
                .reports
                .iter()
                .find(|r| r.scenario.name == name && r.mode == mode)
                .unwrap_or_else(|| panic!("missing report {name}/{mode:?}"))
        };
        baseline_rmse.push(find("baseline", EvalMode::Adversarial).rmse_shift.unwrap());
        improved_rmse.push(find("improved", EvalMode::Adversarial).rmse_shift.unwrap());
        baseline_auc.push(find("baseline", EvalMode::Plain).macro_auc);
        improved_auc.push(find("improved", EvalMode::Plain).macro_auc);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rmse_ratio = mean(&baseline_rmse) / mean(&improved_rmse);
    let auc_drop = mean(&baseline_auc) - mean(&improved_auc);
    let elapsed = started.elapsed().as_secs_f64();

    let pass = rmse_ratio >= 2.0 && auc_drop <= 0.05 && elapsed < 600.0;
    verdict(
        5,
        pass,
        &format!(
            "rmse shift {:.4} -> {:.4} (ratio {rmse_ratio:.2}, need >= 2); \
             foreground macro AUC {:.4} -> {:.4} (drop {auc_drop:.4}, allowed 0.05); {elapsed:.1} s",
            mean(&baseline_rmse),
            mean(&improved_rmse),
            mean(&baseline_auc),
            mean(&improved_auc)
        ),
    );
    assert!(
        rmse_ratio >= 2.0,
        "mitigation too weak: ratio {rmse_ratio} from {baseline_rmse:?} vs {improved_rmse:?}"
    );
    assert!(
        auc_drop <= 0.05,
        "mitigation cost too much accuracy: drop {auc_drop}"
    );
    assert!(elapsed < 600.0, "runtime budget exceeded: {elapsed} s");
}

#[test]
fn acceptance_6_null_dataset_behaves_at_chance() {
    let mut fg_aucs = Vec::new();
    let mut bg_aucs = Vec::new();
    for seed in 0..10u64 {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(dir.path(), 5, 16, 1.0, 0.0, 0.0, 60_000 + seed);
        let out = tempfile::tempdir().unwrap();
        let mut scenario = by_year_scenario("null");
        scenario.background_only_eval = true;
        scenario.seed = seed;
        let config = acceptance_config(&manifest, out.path(), vec![scenario]);
        let outcome = run_experiment(&config).unwrap();
        for report in &outcome.reports {
            match report.mode {
                EvalMode::Plain => fg_aucs.push(report.macro_auc),
                EvalMode::BackgroundOnly => bg_aucs.push(report.macro_auc),
                EvalMode::Adversarial => {}
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (fg_mean, bg_mean) = (mean(&fg_aucs), mean(&bg_aucs));
    let in_band = |v: f64| (0.4..=0.6).contains(&v);
    let pass = in_band(fg_mean) && in_band(bg_mean);
    verdict(
        6,
        pass,
        &format!(
            "over 10 seeds: foreground macro AUC mean {fg_mean:.4}, background-only mean {bg_mean:.4} (band [0.4, 0.6])"
        ),
    );
    assert!(in_band(fg_mean), "foreground not at chance: {fg_mean} from {fg_aucs:?}");
    assert!(in_band(bg_mean), "background not at chance: {bg_mean} from {bg_aucs:?}");
}

#[test]
fn acceptance_7_numerical_invariant_suite() {
    let mut failures: Vec<String> = Vec::new();

    // STFT shape law
    for n in [1024usize, 1500, 44100, 32000, 16001] {
        let clip = AudioClip {
            samples: vec![0.05; n],
            sample_rate: 16000,
        };
        let spec = stft_magnitude(&clip).unwrap();
        if spec.rows() != (n - 1024) / 512 + 1 || spec.cols() != 513 {
            failures.push(format!("stft shape law broke at n={n}"));
        }
        if frame_count(n) != spec.rows() {
            failures.push(format!("frame_count disagrees at n={n}"));
        }
    }

    // material for the learning invariants
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = synth_dataset(dir.path(), 3, 6, 1.0, 0.8, 0.8, 7_001);
    let manifest = load_manifest(&manifest_path).unwrap();
    let fb = MelFilterbank::new(16000).unwrap();
    let mels: Vec<_> = manifest
        .records
        .iter()
        .map(|r| {
            let clip = aaii_core::dataset::load_audio(&manifest.base_dir, r).unwrap();
            log_mel_spectrogram(&clip, &fb, &r.path).unwrap()
        })
        .collect();

    // whitened-variance invariant on the training patches
    let (patches, _) = extract_patches(&mels, 4);
    let whitener = fit_whitener(&patches, 0.99).unwrap();
    let whitened: Vec<Vec<f64>> = patches.iter().map(|p| whitener.whiten_one(p)).collect();
    let n = whitened.len() as f64;
    for d in 0..whitener.output_dim() {
        let mean = whitened.iter().map(|z| z[d]).sum::<f64>() / n;
        let var = whitened.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / n;
        if (var - 1.0).abs() > 1e-3 {
            failures.push(format!("whitened variance off at dim {d}: {var}"));
        }
    }

    // spherical k-means: unit norms and monotone objective
    let fit = spherical_kmeans(&whitened, 16, 9, 100, 1e-6).unwrap();
    for k in 0..16 {
        if (norm(fit.centroids.row(k)) - 1.0).abs() > 1e-6 {
            failures.push(format!("centroid {k} not unit norm"));
        }
    }
    if fit.objective_trace.windows(2).any(|w| w[1] < w[0] - 1e-10) {
        failures.push("k-means objective decreased".into());
    }

    // full codebook path keeps unit norms too
    let (codebook, _) = fit_codebook(
        &mels,
        &FeatLearnParams {
            codebook_size: 8,
            sample_cap: 5000,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    for k in 0..codebook.size() {
        if (norm(codebook.centroids.row(k)) - 1.0).abs() > 1e-6 {
            failures.push(format!("codebook centroid {k} not unit norm"));
        }
    }

    // probability rows sum to one
    let features: Vec<Vec<f64>> = mels
        .iter()
        .map(|m| aaii_core::featlearn::mel_clip_features(m).unwrap().values)
        .collect();
    let labels: Vec<String> = manifest.records.iter().map(|r| r.individual.clone()).collect();
    let model = train_forest(&features, &labels, &ForestParams { n_trees: 60, ..Default::default() }).unwrap();
    let probs = predict_proba(&model, &features).unwrap();
    for (i, row) in probs.probs.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            failures.push(format!("probability row {i} sums to {sum}"));
        }
        if row.iter().any(|p| !p.is_finite()) {
            failures.push(format!("probability row {i} has a non-finite entry"));
        }
    }

    // AUC invariance under a strictly increasing transform
    let scores: Vec<f64> = (0..40).map(|i| ((i * 37) % 19) as f64 / 19.0).collect();
    let truth: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
    let direct = binary_auc(&scores, &truth).unwrap();
    let transformed: Vec<f64> = scores.iter().map(|&s| f64::exp(s)).collect();
    let exp_auc = binary_auc(&transformed, &truth).unwrap();
    if direct != exp_auc {
        failures.push(format!("AUC changed under exp transform: {direct} vs {exp_auc}"));
    }

    // end-to-end determinism: byte-identical reports across two runs
    let out = tempfile::tempdir().unwrap();
    let mut scenario = by_year_scenario("det");
    scenario.use_stratified_augmentation = true;
    scenario.use_feature_learning = true;
    scenario.adversarial_eval = true;
    scenario.background_only_eval = true;
    let config = acceptance_config(&manifest_path, out.path(), vec![scenario]);
    let first = run_experiment(&config).unwrap();
    let first_bytes: Vec<String> = first.reports.iter().map(|r| r.to_json()).collect();
    let second = run_experiment(&config).unwrap();
    let second_bytes: Vec<String> = second.reports.iter().map(|r| r.to_json()).collect();
    if first_bytes != second_bytes {
        failures.push("reports are not byte-identical across two runs".into());
    }

    let pass = failures.is_empty();
    verdict(
        7,
        pass,
        &format!(
            "unit norms (1e-6), objective monotonicity, row sums (1e-9), AUC transform \
             invariance, whitened variance (1e-3), STFT shape law, byte-identical reruns: {}",
            if pass { "all hold".to_string() } else { failures.join("; ") }
        ),
    );
    assert!(pass, "{failures:?}");
}

/// Optional reproduction on the published field recordings. Ignored by
/// default: it needs the dataset downloaded locally and a manifest
/// prepared (see README). Point AAII_FIELD_DATASET_DIR at the directory
/// containing that manifest.csv and run `cargo test -p aaii-core --test
/// acceptance -- --ignored`.
#[test]
#[ignore = "needs the published field-recording dataset on disk; see README"]
fn acceptance_8_field_dataset_reproduction_optional() {
    let Some(dataset_dir) = std::env::var_os("AAII_FIELD_DATASET_DIR") else {
        println!("acceptance criterion 8: SKIP — set AAII_FIELD_DATASET_DIR to the prepared dataset directory");
        return;
    };
    let dataset_dir = PathBuf::from(dataset_dir);
    let manifest_path = dataset_dir.join("manifest.csv");
    let manifest = load_manifest(&manifest_path).unwrap();

    // within-year split: threshold at the median foreground date of the
    // earliest year; across-year split: first year against the rest
    let min_year = manifest
        .records
        .iter()
        .map(|r| chrono::Datelike::year(&r.date))
        .min()
        .unwrap();
    let mut year_dates: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| chrono::Datelike::year(&r.date) == min_year)
        .map(|r| r.date)
        .collect();
    year_dates.sort();
    let threshold = year_dates[year_dates.len() / 2];

    let scenario = |name: &str, rule: SplitRule, aug: bool, learned: bool| {
        let mut s = by_year_scenario(name);
        s.split_rule = rule;
        s.use_stratified_augmentation = aug;
        s.use_feature_learning = learned;
        s
    };
    let out = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        manifest: manifest_path,
        out_dir: out.path().to_path_buf(),
        seed: 42,
        gain: 0.5,
        stratified_includes_originals: true,
        mixcache: None,
        featlearn: FeatLearnParams::default(),
        forest: ForestParams::default(),
        scenarios: vec![
            scenario(
                "within-year-baseline",
                SplitRule::ByDateThreshold { threshold },
                false,
                false,
            ),
            scenario(
                "within-year-improved",
                SplitRule::ByDateThreshold { threshold },
                true,
                true,
            ),
            scenario("across-year-baseline", SplitRule::ByYear, false, false),
            scenario("across-year-improved", SplitRule::ByYear, true, true),
        ],
    };
    let outcome = run_experiment(&config).unwrap();
    let auc = |name: &str| {
        outcome
            .reports
            .iter()
            .find(|r| r.scenario.name == name && r.mode == EvalMode::Plain)
            .map(|r| r.macro_auc)
            .unwrap_or_else(|| panic!("scenario {name} produced no report"))
    };
    let within_base = auc("within-year-baseline");
    let within_improved = auc("within-year-improved");
    let across_base = auc("across-year-baseline");
    let across_improved = auc("across-year-improved");

    // 0.80 floor with the stated 0.05 tolerance; ordering checks are
    // directional
    let pass = within_base > 0.75
        && across_base < within_base
        && within_improved >= within_base - 0.05
        && across_improved >= across_base - 0.05;
    verdict(
        8,
        pass,
        &format!(
            "within-year {within_base:.3} (improved {within_improved:.3}); \
             across-year {across_base:.3} (improved {across_improved:.3})"
        ),
    );
    assert!(pass);
}
