//! Random-forest multi-class classifier over clip feature vectors.
//!
//! Trees are grown on bootstrap samples with Gini splits over a random
//! feature subset per node. Probabilities are the average of normalized
//! leaf histograms across trees (soft voting). Training is deterministic
//! under a seed: each tree draws from its own stream derived from the
//! master seed, so results do not depend on scheduling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BACKGROUND_LABEL;
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::rng::stream_rng_indexed;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    /// Features examined per node; defaults to ceil(sqrt(feature_dim)).
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_trees() -> usize {
    200
}

fn default_min_leaf() -> usize {
    1
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: default_n_trees(),
            min_leaf: default_min_leaf(),
            mtry: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.n_trees == 0 {
            return fail("forest.n_trees must be >= 1".into());
        }
        if self.min_leaf == 0 {
            return fail("forest.min_leaf must be >= 1".into());
        }
        if self.mtry == Some(0) {
            return fail("forest.mtry must be >= 1 when set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_counts<'a>(&'a self, x: &[f64]) -> &'a [u32] {
        let mut at = self.nodes.len() - 1; // root is pushed last
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// A trained ensemble emitting per-class probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub schema_version: u32,
    pub params: ForestParams,
    /// Sorted, unique class labels; probability columns follow this order.
    pub classes: Vec<String>,
    pub feature_dim: usize,
    trees: Vec<Tree>,
}

/// Per-clip, per-class probabilities; each row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub classes: Vec<String>,
    pub probs: Mat,
}

impl ProbabilityMatrix {
    pub fn n_rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn class_column(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }
}

fn gini(counts: &[u32], total: usize) -> f64 {
    let t = total as f64;
    let mut acc = 0.0;
    for &c in counts {
        let p = c as f64 / t;
        acc += p * p;
    }
    1.0 - acc
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn histogram(&self, indices: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Grow a subtree over `indices`; returns the subtree root's node id.
    fn grow(&mut self, indices: Vec<usize>, rng: &mut impl Rng) -> usize {
        let counts = self.histogram(&indices);
        let n = indices.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < 2 * self.min_leaf || n < 2 {
            return self.push_leaf(counts);
        }

        let parent_gini = gini(&counts, n);
        let dim = self.features[0].len();
        let mut candidates: Vec<usize> =
            rand::seq::index::sample(rng, dim, self.mtry.min(dim)).into_vec();
        candidates.sort_unstable();

        // Best split; ties in gain resolve to the lowest feature index and
        // then the lowest threshold because candidates are scanned in
        // ascending order and improvements must be strict.
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = indices.clone();
        for &feature in &candidates {
            sorted.sort_by(|&a, &b| {
                self.features[a][feature]
                    .partial_cmp(&self.features[b][feature])
                    .expect("finite features")
            });
            let mut left_counts = vec![0u32; self.n_classes];
            for split_at in 1..n {
                left_counts[self.labels[sorted[split_at - 1]]] += 1;
                let prev = self.features[sorted[split_at - 1]][feature];
                let next = self.features[sorted[split_at]][feature];
                if prev == next {
                    continue;
                }
                if split_at < self.min_leaf || n - split_at < self.min_leaf {
                    continue;
                }
                let mut right_counts = counts.clone();
                for (r, l) in right_counts.iter_mut().zip(&left_counts) {
                    *r -= l;
                }
                let weighted = (split_at as f64 * gini(&left_counts, split_at)
                    + (n - split_at) as f64 * gini(&right_counts, n - split_at))
                    / n as f64;
                let gain = parent_gini - weighted;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, (prev + next) / 2.0));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.push_leaf(counts);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.features[i][feature] <= threshold);
        let left = self.grow(left_idx, rng);
        let right = self.grow(right_idx, rng);
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    fn push_leaf(&mut self, counts: Vec<u32>) -> usize {
        self.nodes.push(Node::Leaf { counts });
        self.nodes.len() - 1
    }
}

fn validate_features(features: &[Vec<f64>], expected_dim: Option<usize>) -> Result<usize> {
    let Some(first) = features.first() else {
        return Err(Error::EmptyInput {
            context: "feature list".into(),
        });
    };
    let dim = expected_dim.unwrap_or(first.len());
    for row in features {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "feature vector".into(),
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config {
                message: "feature vector contains a non-finite value".into(),
            });
        }
    }
    Ok(dim)
}

/// Train a forest on labeled feature vectors.
pub fn train_forest(
    features: &[Vec<f64>],
    labels: &[String],
    params: &ForestParams,
) -> Result<ForestModel> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "features vs labels".into(),
            expected: features.len(),
            got: labels.len(),
        });
    }
    let dim = validate_features(features, None)?;

    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass {
            found: classes.len(),
        });
    }
    let class_index: std::collections::BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let y: Vec<usize> = labels.iter().map(|l| class_index[l.as_str()]).collect();

    let n = features.len();
    let mtry = params
        .mtry
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .max(1);

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let mut rng = stream_rng_indexed(params.seed, "forest-tree", tree_idx as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                features,
                labels: &y,
                n_classes: classes.len(),
                min_leaf: params.min_leaf.max(1),
                mtry,
                nodes: Vec::new(),
            };
            builder.grow(bootstrap, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(ForestModel {
        schema_version: MODEL_SCHEMA_VERSION,
        params: params.clone(),
        classes,
        feature_dim: dim,
        trees,
    })
}

/// Average the normalized leaf histograms across trees; each row sums to 1.
pub fn predict_proba(model: &ForestModel, features: &[Vec<f64>]) -> Result<ProbabilityMatrix> {
    validate_features(features, Some(model.feature_dim))?;
    let n_classes = model.classes.len();
    let rows: Vec<Vec<f64>> = features
        .par_iter()
        .map(|x| {
            let mut acc = vec![0.0f64; n_classes];
            for tree in &model.trees {
                let counts = tree.leaf_counts(x);
                let total: u32 = counts.iter().sum();
                for (a, &c) in acc.iter_mut().zip(counts) {
                    *a += c as f64 / total as f64;
                }
            }
            for a in acc.iter_mut() {
                *a /= model.trees.len() as f64;
            }
            acc
        })
        .collect();
    Ok(ProbabilityMatrix {
        classes: model.classes.clone(),
        probs: Mat::from_rows(&rows),
    })
}

/// Foreground score per clip: 1 - P(background class).
pub fn predict_detection(model: &ForestModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(bg_col) = model.classes.iter().position(|c| c == BACKGROUND_LABEL) else {
        return Err(Error::MissingBackgroundClass {
            label: BACKGROUND_LABEL.to_string(),
        });
    };
    let probs = predict_proba(model, features)?;
    Ok(probs
        .probs
        .iter_rows()
        .map(|row| 1.0 - row[bg_col])
        .collect())
}

impl ForestModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<ForestModel> {
        let model: ForestModel = serde_json::from_str(json).map_err(|e| Error::Config {
            message: format!("model artifact: {e}"),
        })?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config {
                message: format!(
                    "model schema version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
                    model.schema_version
                ),
            });
        }
        model.validate()?;
        Ok(model)
    }

    /// Structural invariants: sorted unique classes, in-range split
    /// features, every leaf histogram sized to the classes with a positive
    /// total.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { message });
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return fail("model classes are not sorted and unique".into());
        }
        if self.trees.is_empty() {
            return fail("model has no trees".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.feature_dim {
                            return fail(format!(
                                "tree {t}: split feature {feature} out of range {}",
                                self.feature_dim
                            ));
                        }
                        if !threshold.is_finite() {
                            return fail(format!("tree {t}: non-finite threshold"));
                        }
                        if *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return fail(format!("tree {t}: child index out of range"));
                        }
                    }
                    Node::Leaf { counts } => {
                        if counts.len() != self.classes.len() {
                            return fail(format!("tree {t}: leaf histogram has wrong arity"));
                        }
                        if counts.iter().all(|&c| c == 0) {
                            return fail(format!("tree {t}: leaf histogram has zero total"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
