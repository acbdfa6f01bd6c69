//! Outcome classifiers over encoded prefixes.
//!
//! Four model families share one interface: logistic regression, bagged
//! decision trees and gradient-boosted trees consume aggregated count
//! vectors; the recurrent (LSTM) classifier consumes padded one-hot
//! sequences. The recurrent model reads every row of the padded sequence
//! without masking, so hard one-hot inputs and the differentiable softmax
//! relaxation used by latent-space attacks pass through exactly the same
//! computation.
//!
//! A trained classifier predicts the positive class when its probability
//! meets the decision threshold, which is selected on a validation slice by
//! F1 (ties resolving toward 0.5).

mod linear;
mod recurrent;
mod trees;

pub use linear::{LinearParams, LogisticRegression};
pub use recurrent::{RecurrentNet, RecurrentParams};
pub use trees::{BoostParams, ForestParams, GradientBoosting, RandomForest};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    aggregate_encode, onehot_encode, ActivityVocabulary, AggregatedVector, EncodingError,
    SequenceMatrix,
};
use crate::eventlog::{Outcome, PrefixLog};
use crate::manifold::{ClassManifold, ManifoldError};
use crate::nn::Tape;

/// The model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Linear,
    BaggedTrees,
    BoostedTrees,
    Recurrent,
}

impl ClassifierKind {
    /// The encoding this family consumes.
    pub fn input_mode(self) -> InputMode {
        match self {
            ClassifierKind::Recurrent => InputMode::Sequence,
            _ => InputMode::Aggregated,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::BaggedTrees => "bagged_trees",
            ClassifierKind::BoostedTrees => "boosted_trees",
            ClassifierKind::Recurrent => "recurrent",
        }
    }
}

/// Which encoding a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Aggregated,
    Sequence,
}

/// Aggregated-encoding dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDataset {
    pub features: Vec<AggregatedVector>,
    pub labels: Vec<Outcome>,
    pub vocab_fingerprint: u64,
}

/// Sequence-encoding dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub matrices: Vec<SequenceMatrix>,
    pub labels: Vec<Outcome>,
    pub vocab_fingerprint: u64,
}

/// A labeled dataset in one of the two encodings.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedDataset {
    Aggregated(AggregatedDataset),
    Sequence(SequenceDataset),
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        match self {
            EncodedDataset::Aggregated(d) => d.features.len(),
            EncodedDataset::Sequence(d) => d.matrices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[Outcome] {
        match self {
            EncodedDataset::Aggregated(d) => &d.labels,
            EncodedDataset::Sequence(d) => &d.labels,
        }
    }

    pub fn mode(&self) -> InputMode {
        match self {
            EncodedDataset::Aggregated(_) => InputMode::Aggregated,
            EncodedDataset::Sequence(_) => InputMode::Sequence,
        }
    }

    /// Instance view at `index`.
    pub fn instance(&self, index: usize) -> EncodedInstance<'_> {
        match self {
            EncodedDataset::Aggregated(d) => EncodedInstance::Aggregated(&d.features[index]),
            EncodedDataset::Sequence(d) => EncodedInstance::Sequence(&d.matrices[index]),
        }
    }
}

/// One encoded prefix, borrowed in either encoding.
#[derive(Debug, Clone, Copy)]
pub enum EncodedInstance<'a> {
    Aggregated(&'a AggregatedVector),
    Sequence(&'a SequenceMatrix),
}

impl EncodedInstance<'_> {
    pub fn mode(&self) -> InputMode {
        match self {
            EncodedInstance::Aggregated(_) => InputMode::Aggregated,
            EncodedInstance::Sequence(_) => InputMode::Sequence,
        }
    }
}

/// Encodes a prefix log for a model family.
pub fn encode_dataset(
    prefix_log: &PrefixLog,
    vocab: &ActivityVocabulary,
    mode: InputMode,
    max_length: usize,
) -> Result<EncodedDataset, EncodingError> {
    let labels: Vec<Outcome> = prefix_log.prefixes.iter().map(|p| p.label).collect();
    match mode {
        InputMode::Aggregated => {
            let features = prefix_log
                .prefixes
                .iter()
                .map(|p| aggregate_encode(p, vocab))
                .collect::<Result<_, _>>()?;
            Ok(EncodedDataset::Aggregated(AggregatedDataset {
                features,
                labels,
                vocab_fingerprint: vocab.fingerprint(),
            }))
        }
        InputMode::Sequence => {
            let matrices = prefix_log
                .prefixes
                .iter()
                .map(|p| onehot_encode(p, vocab, max_length))
                .collect::<Result<_, _>>()?;
            Ok(EncodedDataset::Sequence(SequenceDataset {
                matrices,
                labels,
                vocab_fingerprint: vocab.fingerprint(),
            }))
        }
    }
}

/// Family-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparams {
    Linear(LinearParams),
    BaggedTrees(ForestParams),
    BoostedTrees(BoostParams),
    Recurrent(RecurrentParams),
}

impl Hyperparams {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyperparams::Linear(_) => ClassifierKind::Linear,
            Hyperparams::BaggedTrees(_) => ClassifierKind::BaggedTrees,
            Hyperparams::BoostedTrees(_) => ClassifierKind::BoostedTrees,
            Hyperparams::Recurrent(_) => ClassifierKind::Recurrent,
        }
    }

    /// Library defaults per family.
    pub fn default_for(kind: ClassifierKind) -> Hyperparams {
        match kind {
            ClassifierKind::Linear => Hyperparams::Linear(LinearParams::default()),
            ClassifierKind::BaggedTrees => Hyperparams::BaggedTrees(ForestParams::default()),
            ClassifierKind::BoostedTrees => Hyperparams::BoostedTrees(BoostParams::default()),
            ClassifierKind::Recurrent => Hyperparams::Recurrent(RecurrentParams::default()),
        }
    }
}

/// Errors raised during training.
#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set contains only the {label} class")]
    SingleClass { label: Outcome },
    #[error("{kind:?} consumes {expected:?} input, dataset is {got:?}")]
    InputMismatch { kind: ClassifierKind, expected: InputMode, got: InputMode },
    #[error("invalid hyperparameters: {reason}")]
    InvalidHyperparams { reason: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// Errors raised during prediction or evaluation.
#[derive(Debug, thiserror::Error)]
pub enum PredictionError {
    #[error("classifier consumes {expected:?} input, instance is {got:?}")]
    InputMismatch { expected: InputMode, got: InputMode },
    #[error("instance has {got} features, model expects {expected}")]
    FeatureDimension { got: usize, expected: usize },
    #[error("{kind:?} does not support {operation}")]
    UnsupportedOperation { kind: ClassifierKind, operation: &'static str },
    #[error("evaluation set contains a single class only")]
    SingleClass,
    #[error("evaluation set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Model {
    Linear(LogisticRegression),
    BaggedTrees(RandomForest),
    BoostedTrees(GradientBoosting),
    Recurrent(RecurrentNet),
}

/// A trained outcome classifier with its decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    kind: ClassifierKind,
    model: Model,
    /// Decision threshold tau: positive iff probability >= tau.
    pub threshold: f64,
    pub vocab_fingerprint: u64,
    pub seed: u64,
}

/// Trains a classifier of the family given by `hyperparams` on `dataset`.
/// Identical dataset, hyperparameters and seed produce an identical model.
pub fn train_classifier(
    dataset: &EncodedDataset,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<Classifier, TrainingError> {
    if dataset.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let labels = dataset.labels();
    let positives = labels.iter().filter(|&&l| l == Outcome::Positive).count();
    if positives == 0 || positives == labels.len() {
        return Err(TrainingError::SingleClass { label: labels[0] });
    }
    let kind = hyperparams.kind();
    if dataset.mode() != kind.input_mode() {
        return Err(TrainingError::InputMismatch {
            kind,
            expected: kind.input_mode(),
            got: dataset.mode(),
        });
    }
    let (model, fingerprint) = match (hyperparams, dataset) {
        (Hyperparams::Linear(params), EncodedDataset::Aggregated(data)) => {
            (Model::Linear(linear::train(data, params)?), data.vocab_fingerprint)
        }
        (Hyperparams::BaggedTrees(params), EncodedDataset::Aggregated(data)) => {
            (Model::BaggedTrees(trees::train_forest(data, params, seed)?), data.vocab_fingerprint)
        }
        (Hyperparams::BoostedTrees(params), EncodedDataset::Aggregated(data)) => {
            (Model::BoostedTrees(trees::train_boosted(data, params, seed)?), data.vocab_fingerprint)
        }
        (Hyperparams::Recurrent(params), EncodedDataset::Sequence(data)) => {
            (Model::Recurrent(recurrent::train(data, params, seed)?), data.vocab_fingerprint)
        }
        _ => unreachable!("input mode checked above"),
    };
    Ok(Classifier { kind, model, threshold: 0.5, vocab_fingerprint: fingerprint, seed })
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn input_mode(&self) -> InputMode {
        self.kind.input_mode()
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, instance: &EncodedInstance) -> Result<f64, PredictionError> {
        match (&self.model, instance) {
            (Model::Linear(model), EncodedInstance::Aggregated(x)) => model.predict_proba(x),
            (Model::BaggedTrees(model), EncodedInstance::Aggregated(x)) => model.predict_proba(x),
            (Model::BoostedTrees(model), EncodedInstance::Aggregated(x)) => model.predict_proba(x),
            (Model::Recurrent(model), EncodedInstance::Sequence(m)) => model.predict_proba(m),
            _ => Err(PredictionError::InputMismatch {
                expected: self.input_mode(),
                got: instance.mode(),
            }),
        }
    }

    /// Probability and thresholded label: positive iff `p >= tau`.
    pub fn predict(&self, instance: &EncodedInstance) -> Result<(f64, Outcome), PredictionError> {
        let probability = self.predict_proba(instance)?;
        let label =
            if probability >= self.threshold { Outcome::Positive } else { Outcome::Negative };
        Ok((probability, label))
    }

    pub(crate) fn recurrent(&self) -> Option<&RecurrentNet> {
        match &self.model {
            Model::Recurrent(net) => Some(net),
            _ => None,
        }
    }
}

/// A selected decision threshold and how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold {
    pub tau: f64,
    /// F1 achieved on the selection set.
    pub f1: f64,
    /// True when the score distribution was degenerate and 0.5 was used.
    pub degenerate: bool,
}

/// Selects the F1-maximal threshold over a validation set. Candidates are
/// the unique predicted probabilities, the midpoints between consecutive
/// ones and 0.5; ties resolve toward 0.5 and then to the smaller value. A
/// degenerate score distribution (all probabilities equal, or a validation
/// set that never separates) falls back to 0.5 with a warning.
pub fn select_threshold(
    classifier: &Classifier,
    validation: &EncodedDataset,
) -> Result<DecisionThreshold, PredictionError> {
    if validation.is_empty() {
        return Err(PredictionError::EmptyDataset);
    }
    let labels = validation.labels();
    let mut probabilities = Vec::with_capacity(validation.len());
    for i in 0..validation.len() {
        probabilities.push(classifier.predict_proba(&validation.instance(i))?);
    }

    let mut unique: Vec<f64> = probabilities.clone();
    unique.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
    unique.dedup();
    if unique.len() < 2 {
        log::warn!("degenerate validation scores (all equal); threshold falls back to 0.5");
        let f1 = f1_at(&probabilities, labels, 0.5);
        return Ok(DecisionThreshold { tau: 0.5, f1, degenerate: true });
    }

    let mut candidates: Vec<f64> = Vec::with_capacity(2 * unique.len() + 1);
    candidates.extend(unique.iter().copied());
    for pair in unique.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(0.5);
    candidates.retain(|&t| t > 0.0 && t < 1.0);
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));
    candidates.dedup();

    let mut best: Option<DecisionThreshold> = None;
    for &tau in &candidates {
        let f1 = f1_at(&probabilities, labels, tau);
        let better = match &best {
            None => true,
            Some(current) => {
                f1 > current.f1 + 1e-12
                    || (f1 > current.f1 - 1e-12 && closer_to_half(tau, current.tau))
            }
        };
        if better {
            best = Some(DecisionThreshold { tau, f1, degenerate: false });
        }
    }
    let best = best.expect("candidate list is non-empty");
    if best.f1 == 0.0 {
        log::warn!("no threshold achieves a positive F1 on the validation slice");
    }
    Ok(best)
}

fn closer_to_half(candidate: f64, incumbent: f64) -> bool {
    let candidate_distance = (candidate - 0.5).abs();
    let incumbent_distance = (incumbent - 0.5).abs();
    candidate_distance < incumbent_distance - 1e-12
        || ((candidate_distance - incumbent_distance).abs() <= 1e-12 && candidate < incumbent)
}

fn f1_at(probabilities: &[f64], labels: &[Outcome], tau: f64) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &label) in probabilities.iter().zip(labels.iter()) {
        let predicted_positive = p >= tau;
        match (predicted_positive, label) {
            (true, Outcome::Positive) => tp += 1,
            (true, Outcome::Negative) => fp += 1,
            (false, Outcome::Positive) => fn_ += 1,
            (false, Outcome::Negative) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Area under the ROC curve by the rank statistic, with tied scores sharing
/// their average rank. Needs both classes in the evaluation set.
pub fn evaluate_auc(
    classifier: &Classifier,
    dataset: &EncodedDataset,
) -> Result<f64, PredictionError> {
    if dataset.is_empty() {
        return Err(PredictionError::EmptyDataset);
    }
    let labels = dataset.labels();
    let mut scores = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        scores.push(classifier.predict_proba(&dataset.instance(i))?);
    }
    auc_from_scores(&scores, labels)
}

/// Rank-statistic AUC over raw scores.
pub fn auc_from_scores(scores: &[f64], labels: &[Outcome]) -> Result<f64, PredictionError> {
    let positives = labels.iter().filter(|&&l| l == Outcome::Positive).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(PredictionError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average ranks across ties.
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let average_rank = (i + j) as f64 / 2.0 + 1.0;
        for &index in &order[i..=j] {
            ranks[index] = average_rank;
        }
        i = j + 1;
    }
    let positive_rank_sum: f64 = labels
        .iter()
        .zip(ranks.iter())
        .filter(|(&l, _)| l == Outcome::Positive)
        .map(|(_, &r)| r)
        .sum();
    let u = positive_rank_sum - (positives * (positives + 1)) as f64 / 2.0;
    Ok(u / (positives as f64 * negatives as f64))
}

/// Loss and gradient, with respect to a latent vector, of steering the
/// recurrent classifier toward `target`: binary cross-entropy of the
/// classifier on the soft decode of `z`, plus `lambda_dist * ||z - z0||^2`.
/// Only the recurrent family supports this (tree ensembles and the linear
/// model are not differentiable through the decoder).
pub fn loss_and_gradient_wrt_latent(
    classifier: &Classifier,
    manifold: &ClassManifold,
    z: &[f64],
    target: Outcome,
    lambda_dist: f64,
    z0: &[f64],
) -> Result<(f64, Vec<f64>), PredictionError> {
    let Some(net) = classifier.recurrent() else {
        return Err(PredictionError::UnsupportedOperation {
            kind: classifier.kind,
            operation: "latent-space gradients",
        });
    };
    let latent_dim = manifold.latent_dim();
    if z.len() != latent_dim || z0.len() != latent_dim {
        return Err(PredictionError::Manifold(ManifoldError::LatentDimension {
            got: z.len(),
            expected: latent_dim,
        }));
    }

    let mut tape = Tape::new();
    let z_var = tape.leaf(Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("latent row"));
    let soft_rows = manifold.unroll_soft_for_attack(&mut tape, z_var);
    let logit = net.logit_from_vars(&mut tape, &soft_rows);

    // Stable BCE from the logit: softplus(logit) - y * logit.
    let y = target.index() as f64;
    let softplus = tape.softplus(logit);
    let y_term = tape.scale(logit, -y);
    let cross_entropy = tape.add(softplus, y_term);

    let z0_var =
        tape.leaf(Array2::from_shape_vec((1, z0.len()), z0.to_vec()).expect("anchor row"));
    let delta = tape.sub(z_var, z0_var);
    let delta_sq = tape.mul(delta, delta);
    let distance = tape.sum_all(delta_sq);
    let penalty = tape.scale(distance, lambda_dist);
    let loss = tape.add(cross_entropy, penalty);

    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss);
    let gradient = grads
        .get(z_var)
        .map(|g| g.row(0).to_vec())
        .unwrap_or_else(|| vec![0.0; z.len()]);
    Ok((loss_value, gradient))
}
