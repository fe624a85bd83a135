//! Random forest of CART trees producing boundary likelihoods.
//!
//! Each tree is grown on a bootstrap sample with its own RNG seeded from
//! `seed + tree_index`, so parallel and serial training agree exactly.
//! Splits minimize Gini impurity over a random feature subset; thresholds are
//! midpoints between consecutive distinct values and ties go to the lowest
//! feature index, then the lowest threshold.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{LineFeatureRecord, FEATURE_NAMES};

pub const MODEL_FORMAT: &str = "delinkit-forest/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("no training data")]
    NoTrainingData,
    #[error("invalid feature value: record {id} has non-finite {feature}")]
    InvalidFeatureValue { id: u64, feature: String },
    #[error("invalid label {value} on record {id}: training labels must be 0 or 1")]
    InvalidLabel { id: u64, value: f64 },
    #[error("training table contains a single class; enable allow_single_class to train anyway")]
    SingleClass,
    #[error("feature schema mismatch: {0}")]
    FeatureSchemaMismatch(String),
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until purity or `min_samples_leaf`.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `ceil(sqrt(F))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub allow_single_class: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            allow_single_class: false,
        }
    }
}

impl ForestParams {
    fn split_features(&self, n_features: usize) -> Result<usize, ClassifierError> {
        let k = self
            .features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize);
        if k == 0 || k > n_features {
            return Err(ClassifierError::InvalidParams(format!(
                "features_per_split must lie in [1, {n_features}], got {k}"
            )));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    /// Samples with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class counts `[negative, positive]`.
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Positive-class fraction of the leaf reached by `x`.
    pub fn leaf_fraction(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { counts } => {
                    return counts[1] as f64 / (counts[0] as f64 + counts[1] as f64)
                }
            }
        }
    }

    fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= n_features {
                        return Err(format!("node {i}: feature index {feature} out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    // Children are stored after their parent (pre-order), which
                    // also rules out cycles.
                    for c in [left, right] {
                        if *c <= i || *c >= self.nodes.len() {
                            return Err(format!("node {i}: invalid child {c}"));
                        }
                    }
                }
                TreeNode::Leaf { counts } => {
                    if counts[0] == 0 && counts[1] == 0 {
                        return Err(format!("node {i}: empty leaf"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub params: ForestParams,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub trees: Vec<DecisionTree>,
}

impl ForestModel {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidModel(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        if self.trees.is_empty() {
            return bad("model has no trees".into());
        }
        if self.feature_names.is_empty() {
            return bad("model has no features".into());
        }
        for name in &self.feature_names {
            if !FEATURE_NAMES.contains(&name.as_str()) {
                return bad(format!("unknown feature {name:?}"));
            }
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.feature_names.len())
                .or_else(|e| bad(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn uses_feature(&self, name: &str) -> bool {
        self.feature_names.iter().any(|n| n == name)
    }

    /// Feature vector of `r` in model order.
    pub fn feature_vector(&self, r: &LineFeatureRecord) -> Result<Vec<f64>, ClassifierError> {
        self.feature_names
            .iter()
            .map(|name| {
                r.feature(name).ok_or_else(|| {
                    ClassifierError::FeatureSchemaMismatch(format!(
                        "record {} lacks feature {name}",
                        r.id
                    ))
                })
            })
            .collect()
    }
}

/// Feature names used for training: the geometry and gradient columns, plus
/// `dsm_grad` when every record carries it.
pub fn training_features(table: &[LineFeatureRecord]) -> Result<Vec<String>, ClassifierError> {
    let with_dsm = table.iter().filter(|r| r.dsm_grad.is_some()).count();
    if with_dsm != 0 && with_dsm != table.len() {
        return Err(ClassifierError::FeatureSchemaMismatch(format!(
            "dsm_grad present on {with_dsm} of {} records",
            table.len()
        )));
    }
    Ok(FEATURE_NAMES
        .iter()
        .filter(|n| **n != "dsm_grad" || with_dsm > 0)
        .map(|n| n.to_string())
        .collect())
}

struct TrainingSet {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

pub fn train_forest(
    table: &[LineFeatureRecord],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, ClassifierError> {
    if table.is_empty() {
        return Err(ClassifierError::NoTrainingData);
    }
    if table.len() < 2 {
        return Err(ClassifierError::InvalidParams(
            "need at least 2 training records".into(),
        ));
    }
    if params.n_trees == 0 {
        return Err(ClassifierError::InvalidParams("n_trees must be >= 1".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(ClassifierError::InvalidParams(
            "min_samples_leaf must be >= 1".into(),
        ));
    }
    let feature_names = training_features(table)?;
    let k = params.split_features(feature_names.len())?;

    let mut rows = Vec::with_capacity(table.len());
    let mut labels = Vec::with_capacity(table.len());
    for r in table {
        let label = match r.boundary {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            value => return Err(ClassifierError::InvalidLabel { id: r.id, value }),
        };
        let mut row = Vec::with_capacity(feature_names.len());
        for name in &feature_names {
            let v = r.feature(name).expect("schema checked");
            if !v.is_finite() {
                return Err(ClassifierError::InvalidFeatureValue {
                    id: r.id,
                    feature: name.clone(),
                });
            }
            row.push(v);
        }
        rows.push(row);
        labels.push(label);
    }
    let positives = labels.iter().filter(|l| **l == 1).count();
    if (positives == 0 || positives == labels.len()) && !params.allow_single_class {
        return Err(ClassifierError::SingleClass);
    }

    let data = TrainingSet { rows, labels };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            grow_tree(&data, params, k, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        format: MODEL_FORMAT.to_string(),
        params: params.clone(),
        seed,
        feature_names,
        trees,
    })
}

fn grow_tree(data: &TrainingSet, params: &ForestParams, k: usize, rng: &mut ChaCha8Rng) -> DecisionTree {
    let n = data.labels.len();
    let mut samples: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut tree = DecisionTree { nodes: Vec::new() };
    build_node(&mut tree, data, params, k, &mut samples, 0, rng);
    tree
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn class_counts(data: &TrainingSet, samples: &[usize]) -> [u32; 2] {
    let mut counts = [0u32; 2];
    for &s in samples {
        counts[data.labels[s] as usize] += 1;
    }
    counts
}

/// `n * gini` for a node with the given class counts.
fn weighted_gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        0.0
    } else {
        n - (c0 * c0 + c1 * c1) / n
    }
}

fn build_node(
    tree: &mut DecisionTree,
    data: &TrainingSet,
    params: &ForestParams,
    k: usize,
    samples: &mut [usize],
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let index = tree.nodes.len();
    let counts = class_counts(data, samples);
    let pure = counts[0] == 0 || counts[1] == 0;
    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_reached || samples.len() < 2 * params.min_samples_leaf {
        tree.nodes.push(TreeNode::Leaf { counts });
        return index;
    }

    let n_features = data.rows[0].len();
    let mut features = sample(rng, n_features, k).into_vec();
    features.sort_unstable();
    let Some(split) = best_split(data, samples, &features, params.min_samples_leaf) else {
        tree.nodes.push(TreeNode::Leaf { counts });
        return index;
    };

    // Placeholder, patched once both children exist.
    tree.nodes.push(TreeNode::Leaf { counts });
    let mid = partition(samples, |s| data.rows[s][split.feature] <= split.threshold);
    let (left_samples, right_samples) = samples.split_at_mut(mid);
    let left = build_node(tree, data, params, k, left_samples, depth + 1, rng);
    let right = build_node(tree, data, params, k, right_samples, depth + 1, rng);
    tree.nodes[index] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    index
}

fn best_split(
    data: &TrainingSet,
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = samples.len();
    let total = class_counts(data, samples);
    let mut best: Option<Split> = None;
    let mut column: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &f in features {
        column.clear();
        column.extend(samples.iter().map(|&s| (data.rows[s][f], data.labels[s])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u32; 2];
        for i in 0..n - 1 {
            left[column[i].1 as usize] += 1;
            let (a, b) = (column[i].0, column[i + 1].0);
            if a == b {
                continue;
            }
            let n_left = i + 1;
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = weighted_gini(left[0] as f64, left[1] as f64)
                + weighted_gini(right[0] as f64, right[1] as f64);
            // Strict improvement keeps the earliest feature and threshold on ties.
            if best.as_ref().map_or(true, |s| score < s.score) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

/// Stable-enough in-place partition; returns the count of `pred`-true items.
fn partition(items: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..items.len() {
        if pred(items[i]) {
            items.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

/// Mean over trees of the positive-class fraction of the reached leaf.
pub fn predict_likelihood(m: &ForestModel, r: &LineFeatureRecord) -> Result<f64, ClassifierError> {
    let x = m.feature_vector(r)?;
    Ok(predict_vector(m, &x))
}

pub fn predict_vector(m: &ForestModel, x: &[f64]) -> f64 {
    let sum: f64 = m.trees.iter().map(|t| t.leaf_fraction(x)).sum();
    (sum / m.trees.len() as f64).clamp(0.0, 1.0)
}

/// Copies of `records` with `boundary` replaced by the predicted likelihood.
pub fn predict_table(
    m: &ForestModel,
    records: &[LineFeatureRecord],
) -> Result<Vec<LineFeatureRecord>, ClassifierError> {
    records
        .par_iter()
        .map(|r| {
            let p = predict_likelihood(m, r)?;
            Ok(LineFeatureRecord {
                boundary: p,
                ..r.clone()
            })
        })
        .collect()
}
