//! AUC-based performance measures and confound diagnostics.
//!
//! `binary_auc` uses the Mann-Whitney formulation: the fraction of
//! (positive, negative) pairs ranked correctly, ties counting 0.5, which
//! equals the trapezoidal area under the ROC curve. Multi-class results are
//! one-vs-rest AUCs aggregated by an unweighted macro mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioSpec;
use crate::error::{Error, Result};
use crate::featlearn::FeatureKind;
use crate::forest::{predict_proba, ForestModel, ProbabilityMatrix};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Mann-Whitney AUC of `scores` against boolean `truth`.
///
/// Computed from average ranks; tied scores share the mean of their rank
/// run, which makes the result exactly equal to all-pairs counting with
/// ties worth 0.5.
pub fn binary_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "scores vs truth".into(),
            expected: truth.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Config {
            message: "scores must be finite".into(),
        });
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Sum of positive items' average ranks (1-based).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if truth[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC per class plus their unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuc {
    pub per_class: BTreeMap<String, f64>,
    pub macro_auc: f64,
    /// Classes without both positives and negatives in the truth labels.
    pub skipped_classes: Vec<String>,
}

pub fn macro_auc(probs: &ProbabilityMatrix, truth: &[String]) -> Result<MacroAuc> {
    if probs.n_rows() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "probability rows vs truth".into(),
            expected: truth.len(),
            got: probs.n_rows(),
        });
    }
    for label in truth {
        if probs.class_column(label).is_none() {
            return Err(Error::Config {
                message: format!("truth label `{label}` has no probability column"),
            });
        }
    }

    let mut per_class = BTreeMap::new();
    let mut skipped = Vec::new();
    for (col, class) in probs.classes.iter().enumerate() {
        let flags: Vec<bool> = truth.iter().map(|t| t == class).collect();
        let n_pos = flags.iter().filter(|&&f| f).count();
        if n_pos == 0 || n_pos == flags.len() {
            skipped.push(class.clone());
            continue;
        }
        let scores: Vec<f64> = probs.probs.iter_rows().map(|r| r[col]).collect();
        per_class.insert(class.clone(), binary_auc(&scores, &flags)?);
    }
    if per_class.is_empty() {
        return Err(Error::NoComputableClass);
    }
    let macro_auc = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MacroAuc {
        per_class,
        macro_auc,
        skipped_classes: skipped,
    })
}

/// Root-mean-square difference over all probability cells.
///
/// Both matrices must describe the same evaluation items in the same row
/// order with the same class columns.
pub fn rmse_shift(adversarial: &ProbabilityMatrix, reference: &ProbabilityMatrix) -> Result<f64> {
    if adversarial.classes != reference.classes {
        return Err(Error::Config {
            message: "probability matrices have different class columns".into(),
        });
    }
    if !adversarial.probs.same_shape(&reference.probs) {
        return Err(adversarial.probs.shape_error(&reference.probs));
    }
    let n = adversarial.probs.data().len();
    let sum_sq: f64 = adversarial
        .probs
        .data()
        .iter()
        .zip(reference.probs.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum_sq / n as f64).sqrt())
}

/// Classify background-only clips against their owners' labels.
///
/// At-chance macro AUC is the expected outcome for an unconfounded model;
/// values well above 0.5 mean the classifier keys on each individual's
/// background rather than its vocalizations.
pub fn background_only_diagnostic(
    model: &ForestModel,
    features: &[Vec<f64>],
    owners: &[String],
) -> Result<MacroAuc> {
    if owners.iter().any(String::is_empty) {
        return Err(Error::Config {
            message: "background clips must carry individual labels".into(),
        });
    }
    let probs = predict_proba(model, features)?;
    macro_auc(&probs, owners)
}

/// Which evaluation produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Plain,
    Adversarial,
    BackgroundOnly,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::Plain => "plain",
            EvalMode::Adversarial => "adversarial",
            EvalMode::BackgroundOnly => "background_only",
        }
    }
}

/// Every decided default echoed into reports so a run is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultsEcho {
    pub mix_gain: f64,
    pub stratified_includes_originals: bool,
    pub frame_len: usize,
    pub hop: usize,
    pub n_bands: usize,
    pub window: String,
    pub mel_scale: String,
    pub mel_f_min: f64,
    pub mel_f_max: f64,
    pub median_scope: String,
    pub log_epsilon: f64,
    pub patch_width: usize,
    pub codebook_size: usize,
    pub variance_keep: f64,
    pub patch_sample_cap: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub mtry: usize,
    pub auc_tie_rule: String,
    pub auc_aggregation: String,
}

/// One evaluation outcome for one scenario and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub scenario: ScenarioSpec,
    pub mode: EvalMode,
    pub feature_kind: FeatureKind,
    pub classes: Vec<String>,
    pub n_train_items: usize,
    pub n_eval_items: usize,
    pub per_class_auc: BTreeMap<String, f64>,
    pub macro_auc: f64,
    pub detection_auc: Option<f64>,
    pub rmse_shift: Option<f64>,
    pub skipped_classes: Vec<String>,
    pub excluded_individuals: Vec<String>,
    pub warnings: Vec<String>,
    /// File next to this report holding the per-clip probability matrix.
    pub probabilities_csv: String,
    pub sample_rate: u32,
    pub defaults: DefaultsEcho,
    pub config_fingerprint: String,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<EvaluationReport> {
        serde_json::from_str(json).map_err(|e| Error::Config {
            message: format!("report artifact: {e}"),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut aucs: Vec<f64> = self.per_class_auc.values().cloned().collect();
        aucs.push(self.macro_auc);
        if let Some(d) = self.detection_auc {
            aucs.push(d);
        }
        if aucs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config {
                message: "report AUC outside [0, 1]".into(),
            });
        }
        if self.rmse_shift.is_some_and(|r| r < 0.0) {
            return Err(Error::Config {
                message: "negative rmse_shift".into(),
            });
        }
        let mean = self.per_class_auc.values().sum::<f64>() / self.per_class_auc.len() as f64;
        if (mean - self.macro_auc).abs() > 1e-12 {
            return Err(Error::Config {
                message: "macro_auc is not the mean of per-class AUCs".into(),
            });
        }
        Ok(())
    }
}

/// Quote a CSV field when it contains a delimiter, quote, or line break.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Flat per-clip probability table: `path,truth,<one column per class>`.
pub fn probabilities_csv(probs: &ProbabilityMatrix, paths: &[String], truth: &[String]) -> String {
    let mut out = String::from("path,truth");
    for class in &probs.classes {
        out.push(',');
        out.push_str(&csv_field(class));
    }
    out.push('\n');
    for (i, row) in probs.probs.iter_rows().enumerate() {
        out.push_str(&csv_field(&paths[i]));
        out.push(',');
        out.push_str(&csv_field(&truth[i]));
        for v in row {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}
