//! Decision-tree ensembles on aggregated count vectors: bagged trees with
//! per-split feature subsampling, and gradient-boosted regression trees on
//! the logistic loss with Newton leaf values.
//!
//! Split search is exhaustive over midpoints between consecutive distinct
//! feature values, scanning features in ascending index order and keeping
//! the first strictly-better split, so tree growth is fully deterministic
//! given the bootstrap/subsample random stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AggregatedDataset, PredictionError, TrainingError};
use crate::encoding::AggregatedVector;
use crate::seeding;

/// Hyperparameters for [`RandomForest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 8, min_leaf: 1 }
    }
}

/// Hyperparameters for [`GradientBoosting`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { n_rounds: 100, max_depth: 3, min_leaf: 1, learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A single decision tree stored as an index arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    root: usize,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut index = self.root;
        loop {
            match &self.nodes[index] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    index = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Bagged classification trees; the prediction is the mean of the per-tree
/// positive-class fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    feature_dim: usize,
}

/// Boosted regression trees on the logistic loss; the prediction is the
/// sigmoid of the accumulated margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    bias: f64,
    trees: Vec<Tree>,
    learning_rate: f64,
    feature_dim: usize,
}

impl RandomForest {
    pub fn predict_proba(&self, x: &AggregatedVector) -> Result<f64, PredictionError> {
        let features = check_dim(x, self.feature_dim)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(&features)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

impl GradientBoosting {
    pub fn predict_proba(&self, x: &AggregatedVector) -> Result<f64, PredictionError> {
        let features = check_dim(x, self.feature_dim)?;
        Ok(sigmoid(self.margin(&features)))
    }

    fn margin(&self, features: &[f64]) -> f64 {
        self.bias
            + self.learning_rate * self.trees.iter().map(|t| t.predict(features)).sum::<f64>()
    }
}

fn check_dim(x: &AggregatedVector, expected: usize) -> Result<Vec<f64>, PredictionError> {
    if x.counts.len() != expected {
        return Err(PredictionError::FeatureDimension { got: x.counts.len(), expected });
    }
    Ok(x.counts.iter().map(|&c| c as f64).collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Split quality: Gini impurity for classification targets in {0, 1},
/// sum of squared errors for regression targets.
#[derive(Clone, Copy, PartialEq)]
enum Criterion {
    Gini,
    SquaredError,
}

/// Leaf statistic: mean target, or a Newton step `sum(g) / sum(h)`.
#[derive(Clone, Copy, PartialEq)]
enum LeafRule {
    Mean,
    NewtonStep,
}

struct GrowContext<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [f64],
    hessians: Option<&'a [f64]>,
    criterion: Criterion,
    leaf_rule: LeafRule,
    max_depth: usize,
    min_leaf: usize,
    /// Number of candidate features per split; `None` scans all of them.
    subsample: Option<usize>,
}

fn grow_tree(ctx: &GrowContext, indices: &[usize], rng: &mut ChaCha8Rng) -> Tree {
    let mut nodes = Vec::new();
    let root = grow_node(ctx, indices, 0, rng, &mut nodes);
    Tree { nodes, root }
}

fn grow_node(
    ctx: &GrowContext,
    indices: &[usize],
    depth: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let first = ctx.targets[indices[0]];
    let pure = indices.iter().all(|&i| ctx.targets[i] == first);
    if depth >= ctx.max_depth || indices.len() < 2 * ctx.min_leaf || pure {
        return push_leaf(ctx, indices, nodes);
    }
    let candidate_features = pick_features(ctx, rng);
    let Some((feature, threshold)) = best_split(ctx, indices, &candidate_features) else {
        return push_leaf(ctx, indices, nodes);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        indices.iter().partition(|&&i| ctx.features[i][feature] <= threshold);
    let left = grow_node(ctx, &left_idx, depth + 1, rng, nodes);
    let right = grow_node(ctx, &right_idx, depth + 1, rng, nodes);
    nodes.push(Node::Split { feature, threshold, left, right });
    nodes.len() - 1
}

fn push_leaf(ctx: &GrowContext, indices: &[usize], nodes: &mut Vec<Node>) -> usize {
    let value = match ctx.leaf_rule {
        LeafRule::Mean => {
            indices.iter().map(|&i| ctx.targets[i]).sum::<f64>() / indices.len() as f64
        }
        LeafRule::NewtonStep => {
            let hessians = ctx.hessians.expect("Newton leaves need hessians");
            let gradient_sum: f64 = indices.iter().map(|&i| ctx.targets[i]).sum();
            let hessian_sum: f64 = indices.iter().map(|&i| hessians[i]).sum();
            // Clamp so near-saturated rounds cannot produce huge steps.
            (gradient_sum / hessian_sum.max(1e-9)).clamp(-4.0, 4.0)
        }
    };
    nodes.push(Node::Leaf { value });
    nodes.len() - 1
}

fn pick_features(ctx: &GrowContext, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dim = ctx.features[0].len();
    match ctx.subsample {
        None => (0..dim).collect(),
        Some(k) if k >= dim => (0..dim).collect(),
        Some(k) => {
            let mut chosen = rand::seq::index::sample(rng, dim, k).into_vec();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Exhaustive best split over the candidate features: thresholds are the
/// midpoints between consecutive distinct values. The first strictly better
/// score wins, so ties resolve to the lowest feature index and threshold.
fn best_split(
    ctx: &GrowContext,
    indices: &[usize],
    candidate_features: &[usize],
) -> Option<(usize, f64)> {
    let n = indices.len();
    let parent_score = score_subset(ctx, indices.iter().copied());
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(n);
    for &feature in candidate_features {
        sorted.clear();
        sorted.extend_from_slice(indices);
        sorted.sort_by(|&a, &b| {
            ctx.features[a][feature]
                .partial_cmp(&ctx.features[b][feature])
                .expect("finite features")
        });
        // Prefix statistics over the sorted order.
        let mut left_sum = 0.0f64;
        let mut left_sumsq = 0.0f64;
        let mut total_sum = 0.0f64;
        let mut total_sumsq = 0.0f64;
        for &i in &sorted {
            total_sum += ctx.targets[i];
            total_sumsq += ctx.targets[i] * ctx.targets[i];
        }
        for split_at in 1..n {
            let index = sorted[split_at - 1];
            left_sum += ctx.targets[index];
            left_sumsq += ctx.targets[index] * ctx.targets[index];
            let previous = ctx.features[index][feature];
            let current = ctx.features[sorted[split_at]][feature];
            if previous == current {
                continue;
            }
            if split_at < ctx.min_leaf || n - split_at < ctx.min_leaf {
                continue;
            }
            let left_n = split_at as f64;
            let right_n = (n - split_at) as f64;
            let score = match ctx.criterion {
                Criterion::Gini => {
                    let gini = |sum: f64, count: f64| {
                        let p = sum / count;
                        2.0 * p * (1.0 - p)
                    };
                    (left_n * gini(left_sum, left_n)
                        + right_n * gini(total_sum - left_sum, right_n))
                        / n as f64
                }
                Criterion::SquaredError => {
                    let sse = |sum: f64, sumsq: f64, count: f64| sumsq - sum * sum / count;
                    sse(left_sum, left_sumsq, left_n)
                        + sse(total_sum - left_sum, total_sumsq - left_sumsq, right_n)
                }
            };
            let improves = score < parent_score - 1e-12;
            let beats_best = best.map_or(true, |(best_score, _, _)| score < best_score);
            if improves && beats_best {
                best = Some((score, feature, (previous + current) / 2.0));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

fn score_subset(ctx: &GrowContext, indices: impl Iterator<Item = usize>) -> f64 {
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let mut count = 0.0f64;
    for i in indices {
        sum += ctx.targets[i];
        sumsq += ctx.targets[i] * ctx.targets[i];
        count += 1.0;
    }
    match ctx.criterion {
        Criterion::Gini => {
            let p = sum / count;
            2.0 * p * (1.0 - p)
        }
        Criterion::SquaredError => sumsq - sum * sum / count,
    }
}

pub(super) fn train_forest(
    data: &AggregatedDataset,
    params: &ForestParams,
    seed: u64,
) -> Result<RandomForest, TrainingError> {
    if params.n_trees == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        return Err(TrainingError::InvalidHyperparams {
            reason: "n_trees, max_depth and min_leaf must be nonzero".into(),
        });
    }
    let (features, targets) = to_rows(data)?;
    let n = features.len();
    let dim = features[0].len();
    let subsample = Some(((dim as f64).sqrt().floor() as usize).max(1));
    let ctx = GrowContext {
        features: &features,
        targets: &targets,
        hessians: None,
        criterion: Criterion::Gini,
        leaf_rule: LeafRule::Mean,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        subsample,
    };
    let mut trees = Vec::with_capacity(params.n_trees);
    for tree_index in 0..params.n_trees {
        let mut rng = seeding::stream_rng(seed, &format!("forest/tree/{tree_index}"));
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        trees.push(grow_tree(&ctx, &bootstrap, &mut rng));
    }
    Ok(RandomForest { trees, feature_dim: dim })
}

pub(super) fn train_boosted(
    data: &AggregatedDataset,
    params: &BoostParams,
    _seed: u64,
) -> Result<GradientBoosting, TrainingError> {
    if params.n_rounds == 0 || params.max_depth == 0 || params.min_leaf == 0 {
        return Err(TrainingError::InvalidHyperparams {
            reason: "n_rounds, max_depth and min_leaf must be nonzero".into(),
        });
    }
    if params.learning_rate <= 0.0 {
        return Err(TrainingError::InvalidHyperparams {
            reason: "learning_rate must be positive".into(),
        });
    }
    let (features, labels) = to_rows(data)?;
    let n = features.len();
    let positive_rate = labels.iter().sum::<f64>() / n as f64;
    // Boosting itself is deterministic: every round sees all instances and
    // all features, so the seed plays no role.
    let mut rng = seeding::stream_rng(0, "boost/unused");
    let bias = (positive_rate / (1.0 - positive_rate)).ln();
    let mut margins = vec![bias; n];
    let all_indices: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(params.n_rounds);
    for round in 0..params.n_rounds {
        let probabilities: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
        let residuals: Vec<f64> =
            labels.iter().zip(&probabilities).map(|(&y, &p)| y - p).collect();
        let hessians: Vec<f64> = probabilities.iter().map(|&p| (p * (1.0 - p)).max(1e-9)).collect();
        let ctx = GrowContext {
            features: &features,
            targets: &residuals,
            hessians: Some(&hessians),
            criterion: Criterion::SquaredError,
            leaf_rule: LeafRule::NewtonStep,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            subsample: None,
        };
        let tree = grow_tree(&ctx, &all_indices, &mut rng);
        for (margin, row) in margins.iter_mut().zip(&features) {
            *margin += params.learning_rate * tree.predict(row);
            if !margin.is_finite() {
                return Err(TrainingError::Diverged { epoch: round });
            }
        }
        trees.push(tree);
    }
    Ok(GradientBoosting {
        bias,
        trees,
        learning_rate: params.learning_rate,
        feature_dim: features[0].len(),
    })
}

fn to_rows(data: &AggregatedDataset) -> Result<(Vec<Vec<f64>>, Vec<f64>), TrainingError> {
    let dim = data.features[0].counts.len();
    if data.features.iter().any(|f| f.counts.len() != dim) {
        return Err(TrainingError::InvalidHyperparams {
            reason: "feature vectors have inconsistent dimensions".into(),
        });
    }
    let features: Vec<Vec<f64>> = data
        .features
        .iter()
        .map(|f| f.counts.iter().map(|&c| c as f64).collect())
        .collect();
    let targets: Vec<f64> = data.labels.iter().map(|&l| l.index() as f64).collect();
    Ok((features, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventlog::Outcome;

    fn dataset(rows: &[(&[u32], Outcome)]) -> AggregatedDataset {
        AggregatedDataset {
            features: rows
                .iter()
                .map(|(c, _)| AggregatedVector { counts: c.to_vec() })
                .collect(),
            labels: rows.iter().map(|&(_, l)| l).collect(),
            vocab_fingerprint: 1,
        }
    }

    fn accuracy_forest(model: &RandomForest, data: &AggregatedDataset) -> f64 {
        let correct = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(f, &l)| {
                let p = model.predict_proba(f).unwrap();
                (p >= 0.5) == (l == Outcome::Positive)
            })
            .count();
        correct as f64 / data.features.len() as f64
    }

    #[test]
    fn single_split_tree_separates_by_threshold() {
        // Feature 1 separates at count 2 vs 0; a depth-1 tree suffices.
        let data = dataset(&[
            (&[1, 0], Outcome::Negative),
            (&[2, 0], Outcome::Negative),
            (&[3, 0], Outcome::Negative),
            (&[1, 2], Outcome::Positive),
            (&[2, 2], Outcome::Positive),
            (&[3, 2], Outcome::Positive),
        ]);
        let (features, targets) = to_rows(&data).unwrap();
        let ctx = GrowContext {
            features: &features,
            targets: &targets,
            hessians: None,
            criterion: Criterion::Gini,
            leaf_rule: LeafRule::Mean,
            max_depth: 1,
            min_leaf: 1,
            subsample: None,
        };
        let mut rng = seeding::stream_rng(0, "test");
        let indices: Vec<usize> = (0..6).collect();
        let tree = grow_tree(&ctx, &indices, &mut rng);
        assert_eq!(tree.predict(&[2.0, 0.0]), 0.0);
        assert_eq!(tree.predict(&[2.0, 2.0]), 1.0);
        // The chosen threshold is the midpoint between the distinct values.
        let has_midpoint_split = tree.nodes.iter().any(
            |n| matches!(n, Node::Split { feature: 1, threshold, .. } if (*threshold - 1.0).abs() < 1e-12),
        );
        assert!(has_midpoint_split, "nodes: {:?}", tree.nodes);
    }

    #[test]
    fn forest_fits_separable_data_and_is_seed_deterministic() {
        let data = dataset(&[
            (&[3, 0, 1], Outcome::Negative),
            (&[2, 1, 0], Outcome::Negative),
            (&[4, 0, 2], Outcome::Negative),
            (&[3, 1, 1], Outcome::Negative),
            (&[0, 3, 1], Outcome::Positive),
            (&[1, 2, 0], Outcome::Positive),
            (&[0, 4, 2], Outcome::Positive),
            (&[1, 3, 1], Outcome::Positive),
        ]);
        let params = ForestParams { n_trees: 30, max_depth: 4, min_leaf: 1 };
        let a = train_forest(&data, &params, 7).unwrap();
        let b = train_forest(&data, &params, 7).unwrap();
        assert_eq!(a, b, "same seed must reproduce the same forest");
        assert_eq!(accuracy_forest(&a, &data), 1.0);
    }

    #[test]
    fn boosting_learns_a_feature_interaction() {
        // Parity of the two features decides the label; no single split or
        // linear model can represent this, depth-2 trees can. A perfectly
        // symmetric four-point parity problem gives the greedy root split
        // zero gain, so one corner is duplicated to break the symmetry the
        // way real logs do.
        let data = dataset(&[
            (&[0, 0], Outcome::Negative),
            (&[0, 1], Outcome::Positive),
            (&[0, 1], Outcome::Positive),
            (&[1, 0], Outcome::Positive),
            (&[1, 1], Outcome::Negative),
        ]);
        let params =
            BoostParams { n_rounds: 60, max_depth: 2, min_leaf: 1, learning_rate: 0.3 };
        let model = train_boosted(&data, &params, 0).unwrap();
        for (features, &label) in data.features.iter().zip(&data.labels) {
            let p = model.predict_proba(features).unwrap();
            assert_eq!(p >= 0.5, label == Outcome::Positive, "p = {p} for {features:?}");
        }
    }

    #[test]
    fn boosting_reduces_log_loss_over_rounds() {
        let data = dataset(&[
            (&[2, 0], Outcome::Negative),
            (&[3, 1], Outcome::Negative),
            (&[1, 0], Outcome::Negative),
            (&[0, 2], Outcome::Positive),
            (&[1, 3], Outcome::Positive),
            (&[0, 1], Outcome::Positive),
        ]);
        let log_loss = |model: &GradientBoosting| -> f64 {
            data.features
                .iter()
                .zip(&data.labels)
                .map(|(f, &l)| {
                    let p = model.predict_proba(f).unwrap().clamp(1e-12, 1.0 - 1e-12);
                    let y = l.index() as f64;
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
        };
        let short = train_boosted(
            &data,
            &BoostParams { n_rounds: 1, ..BoostParams::default() },
            0,
        )
        .unwrap();
        let long = train_boosted(
            &data,
            &BoostParams { n_rounds: 40, ..BoostParams::default() },
            0,
        )
        .unwrap();
        assert!(log_loss(&long) < log_loss(&short));
    }

    #[test]
    fn min_leaf_is_respected() {
        let data = dataset(&[
            (&[0, 0], Outcome::Negative),
            (&[1, 0], Outcome::Negative),
            (&[2, 0], Outcome::Negative),
            (&[3, 0], Outcome::Positive),
        ]);
        let (features, targets) = to_rows(&data).unwrap();
        let ctx = GrowContext {
            features: &features,
            targets: &targets,
            hessians: None,
            criterion: Criterion::Gini,
            leaf_rule: LeafRule::Mean,
            max_depth: 8,
            min_leaf: 2,
            subsample: None,
        };
        let mut rng = seeding::stream_rng(0, "test");
        let tree = grow_tree(&ctx, &[0, 1, 2, 3], &mut rng);
        // Every split must leave >= 2 instances per side: the only legal
        // split is between indices {0,1} and {2,3}.
        for node in &tree.nodes {
            if let Node::Split { feature, threshold, .. } = node {
                assert_eq!(*feature, 0);
                assert!((*threshold - 1.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_features_yield_a_single_leaf() {
        let data = dataset(&[
            (&[1, 1], Outcome::Negative),
            (&[1, 1], Outcome::Positive),
            (&[1, 1], Outcome::Negative),
            (&[1, 1], Outcome::Positive),
        ]);
        let model =
            train_forest(&data, &ForestParams { n_trees: 5, max_depth: 4, min_leaf: 1 }, 3)
                .unwrap();
        let p = model.predict_proba(&AggregatedVector { counts: vec![1, 1] }).unwrap();
        assert!((0.0..=1.0).contains(&p));
        for tree in &model.trees {
            assert_eq!(tree.nodes.len(), 1, "no split is possible on constant features");
        }
    }
}
