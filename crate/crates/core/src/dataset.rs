//! Annotated clip collections and train/eval scenario splits.
//!
//! A dataset is described by a CSV manifest with columns
//! `path,individual,role,date` (extra columns are ignored). Clip paths are
//! resolved relative to the manifest's directory. Splits partition records
//! through time so that evaluation material is always recorded after the
//! training material of the same individual.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioClip};
use crate::error::{Error, Result};

/// Class label reserved for the explicit-background ("wastebasket") training
/// class. Manifest individuals may not use it.
pub const BACKGROUND_LABEL: &str = "_background";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Foreground,
    Background,
}

impl Role {
    /// Case-insensitive parse; `fg`/`bg` shorthands are accepted.
    pub fn parse(s: &str) -> Option<Role> {
        match s.trim().to_ascii_lowercase().as_str() {
            "foreground" | "fg" => Some(Role::Foreground),
            "background" | "bg" => Some(Role::Background),
            _ => None,
        }
    }
}

/// One annotated audio clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    /// Path as written in the manifest, resolved against the manifest dir.
    pub path: String,
    pub individual: String,
    pub role: Role,
    pub date: NaiveDate,
    /// Filled once the audio is probed or loaded.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub sample_rate: Option<u32>,
}

/// An ordered clip collection defining an experiment.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ClipRecord>,
    /// Sorted distinct individual labels (cardinality K).
    pub individuals: Vec<String>,
    /// Directory clip paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, record: &ClipRecord) -> PathBuf {
        resolve_clip_path(&self.base_dir, record)
    }

    /// Read every clip's audio header, filling `duration_s`/`sample_rate`
    /// and enforcing a single sample rate across the collection.
    pub fn probe_audio(&mut self) -> Result<u32> {
        let mut expected: Option<u32> = None;
        let base = self.base_dir.clone();
        for record in &mut self.records {
            let clip = load_audio(&base, record)?;
            check_rate(&base, record, &clip, &mut expected)?;
            record.duration_s = Some(clip.duration_s());
            record.sample_rate = Some(clip.sample_rate);
        }
        Ok(expected.expect("non-empty manifest"))
    }
}

pub fn resolve_clip_path(base_dir: &Path, record: &ClipRecord) -> PathBuf {
    let p = Path::new(&record.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Load one clip's audio.
pub fn load_audio(base_dir: &Path, record: &ClipRecord) -> Result<AudioClip> {
    read_wav(&resolve_clip_path(base_dir, record))
}

fn check_rate(
    base_dir: &Path,
    record: &ClipRecord,
    clip: &AudioClip,
    expected: &mut Option<u32>,
) -> Result<()> {
    match *expected {
        None => {
            *expected = Some(clip.sample_rate);
            Ok(())
        }
        Some(rate) if rate == clip.sample_rate => Ok(()),
        Some(rate) => Err(Error::RateMismatch {
            path: resolve_clip_path(base_dir, record),
            expected: rate,
            found: clip.sample_rate,
        }),
    }
}

/// Load a batch of clips, enforcing one sample rate across calls that share
/// the same `expected_rate` slot.
pub fn load_clips(
    base_dir: &Path,
    records: &[ClipRecord],
    expected_rate: &mut Option<u32>,
) -> Result<Vec<AudioClip>> {
    let mut clips = Vec::with_capacity(records.len());
    for record in records {
        let clip = load_audio(base_dir, record)?;
        check_rate(base_dir, record, &clip, expected_rate)?;
        clips.push(clip);
    }
    Ok(clips)
}

/// Parse `manifest.csv`. Rows are kept in file order; row numbers in errors
/// count the header as row 1.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| Error::ManifestRow {
            path: path.to_path_buf(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let path_col = col("path")?;
    let individual_col = col("individual")?;
    let role_col = col("role")?;
    let date_col = col("date")?;

    let row_err = |row: usize, message: String| Error::ManifestRow {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut records = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let row = i + 2;
        let record = result.map_err(|e| row_err(row, e.to_string()))?;
        let field = |idx: usize, name: &str| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| row_err(row, format!("missing `{name}` field")))
        };

        let clip_path = field(path_col, "path")?.to_string();
        if clip_path.is_empty() {
            return Err(row_err(row, "empty `path` field".into()));
        }
        let individual = field(individual_col, "individual")?.to_string();
        if individual.is_empty() {
            return Err(row_err(row, "empty `individual` field".into()));
        }
        if individual == BACKGROUND_LABEL {
            return Err(row_err(
                row,
                format!("individual label `{BACKGROUND_LABEL}` is reserved"),
            ));
        }
        let role_raw = field(role_col, "role")?;
        let role = Role::parse(role_raw)
            .ok_or_else(|| row_err(row, format!("unknown role value `{role_raw}`")))?;
        let date_raw = field(date_col, "date")?;
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d")
            .map_err(|_| row_err(row, format!("unparseable date `{date_raw}` (want YYYY-MM-DD)")))?;

        records.push(ClipRecord {
            path: clip_path,
            individual,
            role,
            date,
            duration_s: None,
            sample_rate: None,
        });
    }

    if records.is_empty() {
        return Err(Error::EmptyManifest {
            path: path.to_path_buf(),
        });
    }

    let individuals: Vec<String> = records
        .iter()
        .map(|r| r.individual.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if individuals.len() < 2 {
        return Err(Error::TooFewIndividuals {
            path: path.to_path_buf(),
            found: individuals.len(),
        });
    }

    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    Ok(DatasetManifest {
        records,
        individuals,
        base_dir,
    })
}

/// How records are partitioned through time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// Train: date <= threshold; eval: date > threshold.
    ByDateThreshold { threshold: NaiveDate },
    /// Train: the earliest year present; eval: all later years.
    ByYear,
    /// Explicit path lists; records in neither list are dropped.
    ExplicitLists {
        train: Vec<String>,
        eval: Vec<String>,
    },
}

/// What to do with an individual that ends up without foreground items on
/// one side of the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingIndividualPolicy {
    /// Drop the individual's evaluation records and continue.
    #[default]
    Exclude,
    /// Fail the scenario.
    Error,
}

/// One experiment cell: a split plus the pipeline toggles applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub split_rule: SplitRule,
    #[serde(default)]
    pub train_limit_per_individual: Option<usize>,
    #[serde(default)]
    pub use_explicit_background: bool,
    #[serde(default)]
    pub use_stratified_augmentation: bool,
    #[serde(default)]
    pub use_feature_learning: bool,
    #[serde(default)]
    pub adversarial_eval: bool,
    #[serde(default)]
    pub background_only_eval: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub on_missing_individual: MissingIndividualPolicy,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config {
                message: "scenario name must be non-empty".into(),
            });
        }
        if self.train_limit_per_individual == Some(0) {
            return Err(Error::Config {
                message: format!("scenario `{}`: train_limit_per_individual must be >= 1", self.name),
            });
        }
        Ok(())
    }
}

/// split_scenario output.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Vec<ClipRecord>,
    pub eval: Vec<ClipRecord>,
    /// Human-readable notes (individuals with empty sides, etc.).
    pub warnings: Vec<String>,
    /// Individuals dropped from evaluation under the exclude policy.
    pub excluded_individuals: Vec<String>,
}

impl SplitOutcome {
    pub fn train_foreground(&self) -> Vec<ClipRecord> {
        filter_role(&self.train, Role::Foreground)
    }
    pub fn train_background(&self) -> Vec<ClipRecord> {
        filter_role(&self.train, Role::Background)
    }
    pub fn eval_foreground(&self) -> Vec<ClipRecord> {
        filter_role(&self.eval, Role::Foreground)
    }
    pub fn eval_background(&self) -> Vec<ClipRecord> {
        filter_role(&self.eval, Role::Background)
    }
}

fn filter_role(records: &[ClipRecord], role: Role) -> Vec<ClipRecord> {
    records.iter().filter(|r| r.role == role).cloned().collect()
}

type IndexedRecords = Vec<(usize, ClipRecord)>;

/// Partition a manifest into train and eval record lists.
///
/// Deterministic: no randomness is involved. Under a train limit, the
/// earliest-dated items per individual and role are retained (manifest
/// order breaks date ties) and output order follows the manifest.
pub fn split_scenario(manifest: &DatasetManifest, spec: &ScenarioSpec) -> Result<SplitOutcome> {
    spec.validate()?;

    let (mut train, eval): (IndexedRecords, IndexedRecords) =
        match &spec.split_rule {
            SplitRule::ByDateThreshold { threshold } => partition_by(manifest, |r| r.date <= *threshold),
            SplitRule::ByYear => {
                let min_year = manifest
                    .records
                    .iter()
                    .map(|r| r.date.year())
                    .min()
                    .expect("non-empty manifest");
                partition_by(manifest, |r| r.date.year() == min_year)
            }
            SplitRule::ExplicitLists {
                train: train_paths,
                eval: eval_paths,
            } => {
                let train_set: BTreeSet<&str> = train_paths.iter().map(String::as_str).collect();
                let eval_set: BTreeSet<&str> = eval_paths.iter().map(String::as_str).collect();
                let known: BTreeSet<&str> =
                    manifest.records.iter().map(|r| r.path.as_str()).collect();
                for listed in train_set.iter().chain(eval_set.iter()) {
                    if !known.contains(listed) {
                        return Err(Error::Config {
                            message: format!(
                                "scenario `{}`: listed path `{listed}` is not in the manifest",
                                spec.name
                            ),
                        });
                    }
                }
                if let Some(both) = train_set.intersection(&eval_set).next() {
                    return Err(Error::Config {
                        message: format!(
                            "scenario `{}`: path `{both}` appears in both explicit lists",
                            spec.name
                        ),
                    });
                }
                let mut train = Vec::new();
                let mut eval = Vec::new();
                for (i, r) in manifest.records.iter().enumerate() {
                    if train_set.contains(r.path.as_str()) {
                        train.push((i, r.clone()));
                    } else if eval_set.contains(r.path.as_str()) {
                        eval.push((i, r.clone()));
                    }
                }
                (train, eval)
            }
        };

    if let Some(limit) = spec.train_limit_per_individual {
        train = truncate_per_individual(train, limit);
    }

    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let fg_individuals: BTreeSet<&String> = manifest
        .records
        .iter()
        .filter(|r| r.role == Role::Foreground)
        .map(|r| &r.individual)
        .collect();
    let count_fg = |side: &[(usize, ClipRecord)], ind: &String| {
        side.iter()
            .filter(|(_, r)| r.role == Role::Foreground && &r.individual == ind)
            .count()
    };
    let mut missing: Vec<String> = Vec::new();
    for ind in &fg_individuals {
        let n_train = count_fg(&train, ind);
        let n_eval = count_fg(&eval, ind);
        if n_train == 0 || n_eval == 0 {
            let side = if n_train == 0 { "train" } else { "eval" };
            warnings.push(format!(
                "individual `{ind}` has no foreground items in the {side} split"
            ));
            missing.push((*ind).clone());
        }
    }
    if !missing.is_empty() {
        match spec.on_missing_individual {
            MissingIndividualPolicy::Error => {
                return Err(Error::EmptySplit {
                    scenario: spec.name.clone(),
                    side: "train or eval".into(),
                    individuals: missing,
                });
            }
            MissingIndividualPolicy::Exclude => {
                excluded = missing;
            }
        }
    }

    let excluded_set: BTreeSet<&String> = excluded.iter().collect();
    let eval: Vec<ClipRecord> = eval
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| !excluded_set.contains(&r.individual))
        .collect();
    let train: Vec<ClipRecord> = train.into_iter().map(|(_, r)| r).collect();

    Ok(SplitOutcome {
        train,
        eval,
        warnings,
        excluded_individuals: excluded,
    })
}

fn partition_by(
    manifest: &DatasetManifest,
    is_train: impl Fn(&ClipRecord) -> bool,
) -> (IndexedRecords, IndexedRecords) {
    manifest
        .records
        .iter()
        .cloned()
        .enumerate()
        .partition(|(_, r)| is_train(r))
}

/// Keep the `limit` earliest-dated train items per individual and role.
fn truncate_per_individual(train: IndexedRecords, limit: usize) -> IndexedRecords {
    let mut groups: BTreeMap<(String, Role), Vec<usize>> = BTreeMap::new();
    for (slot, (idx, r)) in train.iter().enumerate() {
        let _ = idx;
        groups
            .entry((r.individual.clone(), r.role))
            .or_default()
            .push(slot);
    }
    let mut keep = vec![false; train.len()];
    for slots in groups.values() {
        let mut ordered = slots.clone();
        ordered.sort_by_key(|&s| (train[s].1.date, train[s].0));
        for &s in ordered.iter().take(limit) {
            keep[s] = true;
        }
    }
    train
        .into_iter()
        .enumerate()
        .filter_map(|(slot, item)| keep[slot].then_some(item))
        .collect()
}
