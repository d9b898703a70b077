//! Seeded synthetic foreground/background dataset generator with a
//! controllable planted confound.
//!
//! Each individual gets a vocal signature (tone-pulse fundamental and
//! repetition rhythm, separation scaled by `signature_strength`) and a
//! background signature (bursts of band-limited noise at an individual
//! band center, distinctness scaled by `confound_strength`, on top of
//! wideband noise shared by everyone). Background clips carry only the
//! background; foreground clips add the pulse train. Clip dates span two
//! synthetic years with several recording days per year, so every split
//! rule is exercisable; in year two each background band drifts slightly
//! upward.
//!
//! Frequencies scale with the Nyquist rate: pulse fundamentals span
//! 0.075-0.225 of Nyquist and background bands 0.3125-0.8125, so the two
//! never overlap at any sample rate.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioClip};
use crate::dataset::{load_manifest, DatasetManifest};
use crate::error::{Error, Result};
use crate::rng::stream_rng_indexed;

/// Peak amplitude budget: white noise + one burst + two overlapping pulses
/// stays below this, leaving headroom so mixing at gain 0.5 never clips.
pub const PEAK_BUDGET: f64 = 0.9;

const WHITE_AMP: f64 = 0.02;
const BURST_AMP: f64 = 0.18;
const PULSE_AMP: f64 = 0.45;
const PULSE_LEN_S: f64 = 0.06;
const YEAR2_BG_DRIFT: f64 = 1.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of individuals (K).
    pub k: usize,
    /// Clips per individual per role, split across the two years.
    pub clips_per_role: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// 0: all individuals share one background distribution; 1: fully
    /// individual background bands.
    pub confound_strength: f64,
    /// 0: all individuals share one vocal distribution; 1: fully distinct
    /// fundamentals and rhythms.
    pub signature_strength: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.k < 2 {
            return fail(format!("k must be >= 2, got {}", self.k));
        }
        if self.clips_per_role < 2 {
            return fail("clips_per_role must be >= 2 so both years are populated".into());
        }
        if self.duration_s < 1.0 {
            return fail(format!("duration_s must be >= 1, got {}", self.duration_s));
        }
        if self.sample_rate < 8000 {
            return fail(format!("sample_rate must be >= 8000, got {}", self.sample_rate));
        }
        for (name, v) in [
            ("confound_strength", self.confound_strength),
            ("signature_strength", self.signature_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<SynthSpec> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Config {
            message: format!("synth spec: {e}"),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Deterministic per-individual synthesis parameters (no randomness).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    /// Pulse fundamental per individual, Hz.
    pub pulse_hz: Vec<f64>,
    /// Pulse repetition period per individual, seconds.
    pub pulse_period_s: Vec<f64>,
    /// Background band center per individual (year one), Hz.
    pub background_center_hz: Vec<f64>,
}

fn geometric_lerp(center: f64, full: f64, strength: f64) -> f64 {
    center * (full / center).powf(strength)
}

/// Where each individual's signatures land for the given strengths.
pub fn layout(spec: &SynthSpec) -> SynthLayout {
    let nyquist = spec.sample_rate as f64 / 2.0;
    // vocal identity is carried mostly by rhythm: the fundamentals sit in a
    // narrow band (about one mel band apart) while pulse periods spread
    // more than threefold
    let (f0_lo, f0_hi) = (0.100 * nyquist, 0.145 * nyquist);
    let (bg_lo, bg_hi) = (0.3125 * nyquist, 0.8125 * nyquist);
    let f0_center = (f0_lo * f0_hi).sqrt();
    let bg_center = (bg_lo * bg_hi).sqrt();
    let (period_lo, period_hi) = (0.07f64, 0.24f64);
    let period_center = (period_lo + period_hi) / 2.0;

    let mut pulse_hz = Vec::with_capacity(spec.k);
    let mut pulse_period_s = Vec::with_capacity(spec.k);
    let mut background_center_hz = Vec::with_capacity(spec.k);
    for i in 0..spec.k {
        let spread = i as f64 / (spec.k - 1) as f64;
        let f0_full = f0_lo * (f0_hi / f0_lo).powf(spread);
        let bg_full = bg_lo * (bg_hi / bg_lo).powf(spread);
        let period_full = period_lo + (period_hi - period_lo) * spread;
        pulse_hz.push(geometric_lerp(f0_center, f0_full, spec.signature_strength));
        pulse_period_s.push(
            period_center + (period_full - period_center) * spec.signature_strength,
        );
        background_center_hz.push(geometric_lerp(bg_center, bg_full, spec.confound_strength));
    }
    SynthLayout {
        pulse_hz,
        pulse_period_s,
        background_center_hz,
    }
}

/// Raised-cosine envelope value for position `i` of `len`.
fn envelope(i: usize, len: usize) -> f64 {
    0.5 * (1.0 - (2.0 * PI * i as f64 / (len - 1) as f64).cos())
}

fn add_background(samples: &mut [f64], sr: f64, center_hz: f64, rng: &mut impl Rng) {
    for v in samples.iter_mut() {
        *v += WHITE_AMP * rng.gen_range(-1.0..1.0);
    }

    let duration = samples.len() as f64 / sr;
    let mut t = rng.gen_range(0.0..0.25);
    while t < duration {
        let len_s: f64 = rng.gen_range(0.05..0.15);
        let len = ((len_s * sr) as usize).max(8);
        let n_partials = 10;
        let partials: Vec<(f64, f64)> = (0..n_partials)
            .map(|_| {
                (
                    rng.gen_range(center_hz * 0.90..center_hz * 1.10),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let mut burst: Vec<f64> = (0..len)
            .map(|i| {
                let time = i as f64 / sr;
                partials
                    .iter()
                    .map(|(f, phase)| (2.0 * PI * f * time + phase).sin())
                    .sum::<f64>()
            })
            .collect();
        let peak = burst.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-9);
        let start = (t * sr) as usize;
        for (i, b) in burst.iter_mut().enumerate() {
            let Some(slot) = samples.get_mut(start + i) else {
                break;
            };
            *slot += *b / peak * BURST_AMP * envelope(i, len);
        }
        t += len_s + rng.gen_range(0.10..0.35);
    }
}

fn add_pulses(samples: &mut [f64], sr: f64, f0: f64, period_s: f64, rng: &mut impl Rng) {
    let duration = samples.len() as f64 / sr;
    let len = ((PULSE_LEN_S * sr) as usize).max(8);
    let mut t = 0.05 + rng.gen_range(0.0..0.02);
    while t + PULSE_LEN_S < duration {
        let jitter: f64 = rng.gen_range(-0.008..0.008);
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let start = (((t + jitter).max(0.0)) * sr) as usize;
        for i in 0..len {
            let Some(slot) = samples.get_mut(start + i) else {
                break;
            };
            let time = i as f64 / sr;
            *slot += PULSE_AMP * envelope(i, len) * (2.0 * PI * f0 * time + phase).sin();
        }
        t += period_s;
    }
}

fn clip_dates(clips_per_role: usize) -> Vec<NaiveDate> {
    // even indices fall in year one, odd in year two; five weekly recording
    // days cycle within each year
    (0..clips_per_role)
        .map(|c| {
            let year = if c % 2 == 0 { 2020 } else { 2021 };
            let week = (c / 2) % 5;
            NaiveDate::from_ymd_opt(year, 5, 1).unwrap() + chrono::Days::new(7 * week as u64)
        })
        .collect()
}

/// Generate the dataset under `out_dir` and return its parsed manifest.
///
/// Byte-identical output for identical spec and seed.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let plan = layout(spec);
    let sr = spec.sample_rate as f64;
    let n_samples = (spec.duration_s * sr) as usize;
    let dates = clip_dates(spec.clips_per_role);

    let mut manifest_csv = String::from("path,individual,role,date\n");
    for ind in 0..spec.k {
        let label = format!("i{ind:02}");
        for (role_id, role_name) in [(0usize, "foreground"), (1usize, "background")] {
            for (c, date) in dates.iter().enumerate() {
                let stream = ((ind * 2 + role_id) * spec.clips_per_role + c) as u64;
                let mut rng = stream_rng_indexed(spec.seed, "synth-clip", stream);

                let year2 = c % 2 == 1;
                let bg_center = plan.background_center_hz[ind]
                    * if year2 { YEAR2_BG_DRIFT } else { 1.0 };

                let mut samples = vec![0.0f64; n_samples];
                add_background(&mut samples, sr, bg_center, &mut rng);
                if role_id == 0 {
                    add_pulses(
                        &mut samples,
                        sr,
                        plan.pulse_hz[ind],
                        plan.pulse_period_s[ind],
                        &mut rng,
                    );
                }

                let peak = samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                assert!(
                    peak <= PEAK_BUDGET,
                    "synthesis exceeded the headroom budget: {peak}"
                );

                let file_name = format!("{label}_{}_{c:03}.wav", if role_id == 0 { "fg" } else { "bg" });
                let clip = AudioClip {
                    samples: samples.iter().map(|&v| v as f32).collect(),
                    sample_rate: spec.sample_rate,
                };
                write_wav(&out_dir.join(&file_name), &clip)?;
                manifest_csv.push_str(&format!(
                    "{file_name},{label},{role_name},{}\n",
                    date.format("%Y-%m-%d")
                ));
            }
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, manifest_csv).map_err(|e| Error::io(&manifest_path, e))?;
    load_manifest(&manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;
    use chrono::Datelike;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            k: 3,
            clips_per_role: 4,
            duration_s: 1.0,
            sample_rate: 16000,
            confound_strength: 1.0,
            signature_strength: 1.0,
            seed: 99,
        }
    }

    #[test]
    fn layout_collapses_when_strengths_are_zero() {
        let mut spec = small_spec();
        spec.confound_strength = 0.0;
        spec.signature_strength = 0.0;
        let plan = layout(&spec);
        assert!(plan.background_center_hz.windows(2).all(|w| w[0] == w[1]));
        assert!(plan.pulse_hz.windows(2).all(|w| w[0] == w[1]));
        assert!(plan.pulse_period_s.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn layout_spreads_with_full_strengths() {
        let plan = layout(&small_spec());
        for w in plan.background_center_hz.windows(2) {
            assert!(w[1] > w[0] * 1.05);
        }
        for w in plan.pulse_hz.windows(2) {
            assert!(w[1] > w[0] * 1.05);
        }
        // bands never collide with vocals at any strength
        let nyquist = 8000.0;
        assert!(plan.pulse_hz.iter().all(|&f| f < 0.25 * nyquist));
        assert!(plan.background_center_hz.iter().all(|&f| f > 0.3 * nyquist));
    }

    #[test]
    fn generate_writes_expected_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            k: 5,
            clips_per_role: 20,
            duration_s: 2.0,
            sample_rate: 16000,
            confound_strength: 0.5,
            signature_strength: 0.5,
            seed: 1,
        };
        let manifest = generate(&spec, dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 200);
        assert_eq!(manifest.individuals.len(), 5);
        let wavs = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "wav")
            })
            .count();
        assert_eq!(wavs, 200);

        let fg = manifest
            .records
            .iter()
            .filter(|r| r.role == Role::Foreground)
            .count();
        assert_eq!(fg, 100);

        // both years present, several distinct days per year
        let years: std::collections::BTreeSet<i32> =
            manifest.records.iter().map(|r| r.date.year()).collect();
        assert_eq!(years.len(), 2);
        let days_year1: std::collections::BTreeSet<NaiveDate> = manifest
            .records
            .iter()
            .filter(|r| r.date.year() == 2020)
            .map(|r| r.date)
            .collect();
        assert!(days_year1.len() >= 3);
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let spec = small_spec();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&spec, dir_a.path()).unwrap();
        generate(&spec, dir_b.path()).unwrap();

        let mut names: Vec<String> = fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 3 * 2 * 4 + 1);
        for name in names {
            let a = fs::read(dir_a.path().join(&name)).unwrap();
            let b = fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name} differs between runs");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut spec = small_spec();
        generate(&spec, dir_a.path()).unwrap();
        spec.seed = 100;
        generate(&spec, dir_b.path()).unwrap();
        let a = fs::read(dir_a.path().join("i00_fg_000.wav")).unwrap();
        let b = fs::read(dir_b.path().join("i00_fg_000.wav")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn samples_stay_inside_the_headroom_budget() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&small_spec(), dir.path()).unwrap();
        for record in &manifest.records {
            let clip = crate::dataset::load_audio(&manifest.base_dir, record).unwrap();
            let peak = clip.samples.iter().fold(0.0f32, |a, &b| a.max(b.abs()));
            assert!(peak <= PEAK_BUDGET as f32 + 1.0 / 32768.0, "{}: {peak}", record.path);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec();
        spec.k = 1;
        assert!(spec.validate().is_err());
        spec = small_spec();
        spec.duration_s = 0.5;
        assert!(spec.validate().is_err());
        spec = small_spec();
        spec.confound_strength = 1.5;
        assert!(spec.validate().is_err());
        spec = small_spec();
        spec.clips_per_role = 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toml_spec_parses() {
        let spec = SynthSpec::from_toml_str(
            "k = 4\nclips_per_role = 6\nduration_s = 1.5\nsample_rate = 16000\n\
             confound_strength = 0.8\nsignature_strength = 0.3\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(spec.k, 4);
        assert_eq!(spec.sample_rate, 16000);
    }
}
