//! Structured data augmentation by foreground/background mixing.
//!
//! Two plan kinds, both driven by identity metadata rather than random
//! pairing:
//!
//! * stratified (training): every foreground item is paired with one
//!   background clip from each other individual, so the enlarged training
//!   set shows every voice over every territory;
//! * adversarial (evaluation): every foreground item is paired with one
//!   background clip from one uniformly chosen other individual, keeping
//!   the evaluation set size unchanged.
//!
//! Mixing sums both sources at a fixed gain (default 0.5, which cannot
//! clip); a shorter background is looped to the foreground's length.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{clip_from_wav_bytes, wav_bytes_f32, AudioClip};
use crate::dataset::{load_audio, ClipRecord};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const DEFAULT_MIX_GAIN: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKind {
    Stratified,
    Adversarial,
}

impl MixKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MixKind::Stratified => "stratified",
            MixKind::Adversarial => "adversarial",
        }
    }
}

/// One planned mixture; the output label is always the foreground owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub foreground: ClipRecord,
    pub background: ClipRecord,
    pub output_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub kind: MixKind,
    pub seed: u64,
    pub entries: Vec<MixEntry>,
}

/// Mix two equal-rate clips: `gain * fg + gain * bg`, background looped to
/// the foreground length, output clamped to [-1, 1]. Returns the mixture
/// and the number of samples that needed clamping.
pub fn mix_clips(fg: &AudioClip, bg: &AudioClip, gain: f32) -> Result<(AudioClip, usize)> {
    if fg.sample_rate != bg.sample_rate {
        return Err(Error::RateMismatch {
            path: "<mix background>".into(),
            expected: fg.sample_rate,
            found: bg.sample_rate,
        });
    }
    let bg_len = bg.samples.len();
    let mut clamped = 0usize;
    let samples: Vec<f32> = fg
        .samples
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let raw = gain * f + gain * bg.samples[i % bg_len];
            if raw.abs() > 1.0 {
                clamped += 1;
                raw.clamp(-1.0, 1.0)
            } else {
                raw
            }
        })
        .collect();
    Ok((
        AudioClip {
            samples,
            sample_rate: fg.sample_rate,
        },
        clamped,
    ))
}

fn backgrounds_by_owner(records: &[ClipRecord]) -> std::collections::BTreeMap<&str, Vec<&ClipRecord>> {
    let mut map: std::collections::BTreeMap<&str, Vec<&ClipRecord>> = Default::default();
    for r in records {
        map.entry(r.individual.as_str()).or_default().push(r);
    }
    map
}

/// Stratified plan: K-1 mixtures per training foreground item, one
/// background per other individual, chosen uniformly among that
/// individual's background clips.
pub fn plan_stratified(
    train_fg: &[ClipRecord],
    train_bg: &[ClipRecord],
    seed: u64,
) -> Result<MixPlan> {
    let mut individuals: Vec<&str> = train_fg.iter().map(|r| r.individual.as_str()).collect();
    individuals.sort_unstable();
    individuals.dedup();

    let bg_by_owner = backgrounds_by_owner(train_bg);
    let missing: Vec<String> = individuals
        .iter()
        .filter(|ind| !bg_by_owner.contains_key(**ind))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBackgrounds {
            individuals: missing,
        });
    }

    let mut rng = stream_rng(seed, "stratified-plan");
    let mut entries = Vec::with_capacity(train_fg.len() * individuals.len().saturating_sub(1));
    for fg in train_fg {
        for other in &individuals {
            if *other == fg.individual {
                continue;
            }
            let bg = bg_by_owner[other]
                .choose(&mut rng)
                .expect("owner has backgrounds");
            entries.push(MixEntry {
                foreground: fg.clone(),
                background: (*bg).clone(),
                output_label: fg.individual.clone(),
            });
        }
    }
    Ok(MixPlan {
        kind: MixKind::Stratified,
        seed,
        entries,
    })
}

/// Adversarial plan: exactly one mixture per evaluation foreground item.
/// The distracting individual is chosen uniformly among the others, then
/// one of its background clips uniformly; clips may be reused.
pub fn plan_adversarial(
    eval_fg: &[ClipRecord],
    eval_bg: &[ClipRecord],
    seed: u64,
) -> Result<MixPlan> {
    let bg_by_owner = backgrounds_by_owner(eval_bg);
    let mut rng = stream_rng(seed, "adversarial-plan");
    let mut entries = Vec::with_capacity(eval_fg.len());
    for fg in eval_fg {
        let others: Vec<&str> = bg_by_owner
            .keys()
            .filter(|&&owner| owner != fg.individual)
            .copied()
            .collect();
        if others.is_empty() {
            return Err(Error::NoForeignBackground {
                individual: fg.individual.clone(),
            });
        }
        let owner = others[rng.gen_range(0..others.len())];
        let bg = bg_by_owner[owner].choose(&mut rng).expect("non-empty owner group");
        entries.push(MixEntry {
            foreground: fg.clone(),
            background: (*bg).clone(),
            output_label: fg.individual.clone(),
        });
    }
    Ok(MixPlan {
        kind: MixKind::Adversarial,
        seed,
        entries,
    })
}

/// A realized mixture carrying its training/evaluation label.
#[derive(Debug, Clone)]
pub struct RealizedMix {
    pub clip: AudioClip,
    pub label: String,
}

fn realize_entry(entry: &MixEntry, gain: f32, base_dir: &Path) -> Result<(AudioClip, usize)> {
    // owner inequality is a plan invariant; recheck before touching audio
    assert_ne!(
        entry.foreground.individual, entry.background.individual,
        "mix plan pairs a foreground with its own background"
    );
    let fg = load_audio(base_dir, &entry.foreground)?;
    let bg = load_audio(base_dir, &entry.background)?;
    mix_clips(&fg, &bg, gain).map_err(|e| match e {
        Error::RateMismatch { expected, found, .. } => Error::RateMismatch {
            path: crate::dataset::resolve_clip_path(base_dir, &entry.background),
            expected,
            found,
        },
        other => other,
    })
}

/// Realize every plan entry in order. Returns the labeled mixtures and the
/// total number of clamped samples (zero at the default gain).
pub fn realize_plan(plan: &MixPlan, gain: f32, base_dir: &Path) -> Result<(Vec<RealizedMix>, usize)> {
    let results: Vec<Result<(AudioClip, usize)>> = plan
        .entries
        .par_iter()
        .map(|entry| realize_entry(entry, gain, base_dir))
        .collect();
    let mut mixes = Vec::with_capacity(plan.entries.len());
    let mut clamped_total = 0usize;
    for (entry, result) in plan.entries.iter().zip(results) {
        let (clip, clamped) = result?;
        clamped_total += clamped;
        mixes.push(RealizedMix {
            clip,
            label: entry.output_label.clone(),
        });
    }
    Ok((mixes, clamped_total))
}

/// Cache key: content hash of both source files plus the gain.
fn cache_name(entry: &MixEntry, gain: f32, base_dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for record in [&entry.foreground, &entry.background] {
        let path = crate::dataset::resolve_clip_path(base_dir, record);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    hasher.update(gain.to_le_bytes());
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Realize a plan through a `mixcache` directory: each mixture is stored as
/// `<sha256>.wav` (32-bit float, lossless) and reused on later runs.
pub fn realize_plan_cached(
    plan: &MixPlan,
    gain: f32,
    base_dir: &Path,
    cache_dir: &Path,
) -> Result<(Vec<RealizedMix>, usize)> {
    fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut mixes = Vec::with_capacity(plan.entries.len());
    let mut clamped_total = 0usize;
    for entry in &plan.entries {
        let cached = cache_dir.join(format!("{}.wav", cache_name(entry, gain, base_dir)?));
        let clip = if cached.is_file() {
            let bytes = fs::read(&cached).map_err(|e| Error::io(&cached, e))?;
            clip_from_wav_bytes(&cached, &bytes)?
        } else {
            let (clip, clamped) = realize_entry(entry, gain, base_dir)?;
            clamped_total += clamped;
            fs::write(&cached, wav_bytes_f32(&clip)).map_err(|e| Error::io(&cached, e))?;
            clip
        };
        mixes.push(RealizedMix {
            clip,
            label: entry.output_label.clone(),
        });
    }
    Ok((mixes, clamped_total))
}

/// Audit CSV: `fg_path,bg_path,label,kind,seed`.
pub fn plan_to_csv(plan: &MixPlan) -> String {
    use crate::eval::csv_field;
    let mut out = String::from("fg_path,bg_path,label,kind,seed\n");
    for entry in &plan.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&entry.foreground.path),
            csv_field(&entry.background.path),
            csv_field(&entry.output_label),
            plan.kind.as_str(),
            plan.seed
        ));
    }
    out
}
