//! Adversarial prefix generation.
//!
//! Eight attack methods over a gated pool of correctly-predicted test
//! prefixes: three input-space permutation attacks (last event, all events,
//! k events), the same three routed through a class-manifold projection,
//! plus latent sampling and latent gradient steps. Every prefix is attacked
//! with the manifold of its true class; from the surviving candidates the
//! one closest to the original in latent space is selected.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::classifiers::{
    loss_and_gradient_wrt_latent, Classifier, ClassifierKind, EncodedInstance, InputMode,
    PredictionError,
};
use crate::encoding::{
    aggregate_encode_activities, onehot_encode_activities, ActivityVocabulary, EncodingError,
};
use crate::eventlog::{Outcome, Prefix, PrefixLog};
use crate::manifold::{reparameterize, ClassManifold, ManifoldError};
use crate::metrics::{euclidean, MetricsError};
use crate::seeding;

/// How candidate sequences are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStrategy {
    /// Raw input-space permutations.
    Regular,
    /// Input-space permutations projected through the class manifold.
    Projected,
    /// Decodes of posterior samples around the original prefix.
    LatentSampled,
    /// Latent descent against the recurrent classifier.
    GradientBased,
}

impl AttackStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AttackStrategy::Regular => "regular",
            AttackStrategy::Projected => "projected",
            AttackStrategy::LatentSampled => "latent_sampled",
            AttackStrategy::GradientBased => "gradient_based",
        }
    }
}

/// Which positions a permutation attack touches. Ignored by the latent
/// strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    LastEvent,
    AllEvent,
    KEvent,
}

impl AttackType {
    pub fn name(self) -> &'static str {
        match self {
            AttackType::LastEvent => "last_event",
            AttackType::AllEvent => "all_event",
            AttackType::KEvent => "k_event",
        }
    }
}

/// Full attack specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub strategy: AttackStrategy,
    /// Permutation flavor; ignored for the latent strategies.
    pub attack_type: AttackType,
    /// Candidates generated per prefix.
    pub nr_adv: usize,
    /// Positions modified per candidate (k-event attack only).
    pub k_events: usize,
    /// Gradient-descent iteration budget.
    pub max_iters: usize,
    /// Gradient-descent step size.
    pub step_size: f64,
    /// Weight of the latent-anchor penalty in the gradient loss.
    pub lambda_dist: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            strategy: AttackStrategy::Regular,
            attack_type: AttackType::LastEvent,
            nr_adv: 16,
            k_events: 3,
            max_iters: 1500,
            step_size: 0.05,
            lambda_dist: 0.1,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Report name of the candidate generator, e.g. `last_event` or
    /// `latent_sampling`.
    pub fn attack_name(&self) -> &'static str {
        match self.strategy {
            AttackStrategy::Regular | AttackStrategy::Projected => self.attack_type.name(),
            AttackStrategy::LatentSampled => "latent_sampling",
            AttackStrategy::GradientBased => "gradient_steps",
        }
    }

    /// Stable identity used for per-prefix random streams and reports.
    pub fn method_identity(&self) -> String {
        format!("{}/{}", self.attack_name(), self.strategy.name())
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.nr_adv == 0 {
            return Err(AttackError::InvalidConfig { reason: "nr_adv must be >= 1".into() });
        }
        if self.k_events == 0 {
            return Err(AttackError::InvalidConfig { reason: "k_events must be >= 1".into() });
        }
        if self.step_size < 0.0 || !self.step_size.is_finite() {
            return Err(AttackError::InvalidConfig {
                reason: "step_size must be finite and nonnegative".into(),
            });
        }
        if self.lambda_dist < 0.0 || !self.lambda_dist.is_finite() {
            return Err(AttackError::InvalidConfig {
                reason: "lambda_dist must be finite and nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// Errors raised while generating adversarial prefixes.
#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("the {kind:?} classifier cannot serve gradient-based attacks")]
    UnsupportedClassifier { kind: ClassifierKind },
    #[error("the k-event attack needs a position-activity table")]
    MissingTable,
    #[error("vocabulary fingerprint mismatch between {context}")]
    VocabularyMismatch { context: &'static str },
    #[error("shape mismatch: {reason}")]
    ShapeMismatch { reason: String },
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

/// The (position, activity) pairs observed in a training prefix log;
/// positions are 1-based. The k-event attack draws its substitutions from
/// here so that every modification is something the process has actually
/// exhibited at that position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionActivityTable {
    by_position: BTreeMap<usize, BTreeSet<String>>,
}

/// Enumerates the observed (position, activity) pairs of a prefix log.
pub fn build_position_activity_table(train: &PrefixLog) -> PositionActivityTable {
    let mut by_position: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for prefix in &train.prefixes {
        for (offset, activity) in prefix.activities.iter().enumerate() {
            by_position.entry(offset + 1).or_default().insert(activity.clone());
        }
    }
    PositionActivityTable { by_position }
}

impl PositionActivityTable {
    /// Activities observed at a 1-based position, in sorted order.
    pub fn admissible_at(&self, position: usize) -> impl Iterator<Item = &str> {
        self.by_position
            .get(&position)
            .into_iter()
            .flat_map(|set| set.iter().map(String::as_str))
    }

    pub fn contains(&self, position: usize, activity: &str) -> bool {
        self.by_position.get(&position).is_some_and(|set| set.contains(activity))
    }

    pub fn is_empty(&self) -> bool {
        self.by_position.is_empty()
    }
}

/// Substitutes the final activity: every distinct in-vocabulary replacement
/// is a candidate, shuffled, at most `nr_adv` of them.
pub fn permute_last_event(
    prefix: &Prefix,
    vocab: &ActivityVocabulary,
    rng: &mut ChaCha8Rng,
    nr_adv: usize,
) -> Vec<Vec<String>> {
    let Some(last) = prefix.activities.last() else {
        return Vec::new();
    };
    let mut replacements: Vec<&String> =
        vocab.activities().iter().filter(|a| *a != last).collect();
    replacements.shuffle(rng);
    replacements
        .into_iter()
        .take(nr_adv)
        .map(|replacement| {
            let mut candidate = prefix.activities.clone();
            *candidate.last_mut().expect("nonempty") = replacement.clone();
            candidate
        })
        .collect()
}

/// Resamples every position uniformly from the vocabulary minus the current
/// activity; `nr_adv` draws, deduplicated in generation order.
pub fn permute_all_events(
    prefix: &Prefix,
    vocab: &ActivityVocabulary,
    rng: &mut ChaCha8Rng,
    nr_adv: usize,
) -> Vec<Vec<String>> {
    if prefix.activities.is_empty() || vocab.n_activities() < 2 {
        return Vec::new();
    }
    let mut candidates: Vec<Vec<String>> = Vec::new();
    for _ in 0..nr_adv {
        let candidate: Vec<String> = prefix
            .activities
            .iter()
            .map(|original| {
                let pool: Vec<&String> =
                    vocab.activities().iter().filter(|a| *a != original).collect();
                pool[rng.gen_range(0..pool.len())].clone()
            })
            .collect();
        if !candidates.contains(&candidate) {
            candidates.push(candidate);
        }
    }
    candidates
}

/// Modifies up to `k` distinct positions per candidate; each modification
/// draws a (position, activity) pair uniformly from the table entries with
/// a different activity than the original, never reusing a position.
pub fn permute_k_events(
    prefix: &Prefix,
    k: usize,
    table: &PositionActivityTable,
    rng: &mut ChaCha8Rng,
    nr_adv: usize,
) -> Vec<Vec<String>> {
    let admissible: Vec<(usize, &str)> = (1..=prefix.activities.len())
        .flat_map(|position| {
            let original = &prefix.activities[position - 1];
            table
                .admissible_at(position)
                .filter(move |activity| *activity != original.as_str())
                .map(move |activity| (position, activity))
        })
        .collect();
    if admissible.is_empty() {
        return Vec::new();
    }
    let mut candidates: Vec<Vec<String>> = Vec::new();
    for _ in 0..nr_adv {
        let mut pool = admissible.clone();
        let mut candidate = prefix.activities.clone();
        for _ in 0..k {
            if pool.is_empty() {
                break;
            }
            let (position, activity) = pool[rng.gen_range(0..pool.len())];
            candidate[position - 1] = activity.to_string();
            pool.retain(|&(p, _)| p != position);
        }
        if !candidates.contains(&candidate) {
            candidates.push(candidate);
        }
    }
    candidates
}

/// Projects a sequence onto the class manifold: the greedy decode of its
/// posterior mean. Deterministic; the result's length may differ.
pub fn project(
    manifold: &ClassManifold,
    candidate: &[String],
    vocab: &ActivityVocabulary,
) -> Result<Vec<String>, ManifoldError> {
    let point = manifold.encode_activities(candidate, vocab)?;
    Ok(manifold.decode(&point.mu, vocab)?.activities)
}

/// Decodes `nr_adv` posterior samples of the prefix; candidates identical
/// to the original sequence are discarded and duplicates collapse.
pub fn latent_sampling_attack(
    manifold: &ClassManifold,
    prefix: &Prefix,
    vocab: &ActivityVocabulary,
    nr_adv: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<String>>, ManifoldError> {
    let point = manifold.encode(prefix, vocab)?;
    let mut candidates: Vec<Vec<String>> = Vec::new();
    for _ in 0..nr_adv {
        let eps: Vec<f64> =
            (0..point.mu.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z = reparameterize(&point, &eps);
        let decoded = manifold.decode(&z, vocab)?;
        if decoded.activities == prefix.activities || decoded.activities.is_empty() {
            continue;
        }
        if !candidates.contains(&decoded.activities) {
            candidates.push(decoded.activities);
        }
    }
    Ok(candidates)
}

/// Latent descent: starting from the posterior mean, step against the
/// gradient of the classifier's loss toward the flipped label (plus an
/// anchor penalty), decoding and hard-classifying after every step. Returns
/// the first decode whose prediction flips, or `None` when the budget runs
/// out.
pub fn gradient_steps_attack(
    manifold: &ClassManifold,
    classifier: &Classifier,
    prefix: &Prefix,
    vocab: &ActivityVocabulary,
    config: &AttackConfig,
) -> Result<Option<Vec<String>>, AttackError> {
    if classifier.kind() != ClassifierKind::Recurrent {
        return Err(AttackError::UnsupportedClassifier { kind: classifier.kind() });
    }
    let max_length = manifold.config.max_length;
    let (_, original_label) = predict_activities(classifier, &prefix.activities, vocab, max_length)?;
    let target = original_label.flipped();
    let z0 = manifold.encode(prefix, vocab)?.mu;
    let mut z = z0.clone();
    for _ in 0..config.max_iters {
        let (_, gradient) = loss_and_gradient_wrt_latent(
            classifier,
            manifold,
            &z,
            target,
            config.lambda_dist,
            &z0,
        )?;
        for (zi, gi) in z.iter_mut().zip(gradient.iter()) {
            *zi -= config.step_size * gi;
        }
        let decoded = manifold.decode(&z, vocab)?;
        if decoded.activities.is_empty() {
            continue;
        }
        let (_, label) = predict_activities(classifier, &decoded.activities, vocab, max_length)?;
        if label != original_label {
            return Ok(Some(decoded.activities));
        }
    }
    Ok(None)
}

/// The winner of closest-candidate selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCandidate {
    /// Index into the candidate list (ties go to the earliest).
    pub index: usize,
    pub activities: Vec<String>,
    /// Euclidean distance between the posterior means.
    pub latent_distance: f64,
}

/// Picks the candidate whose posterior mean lies closest to the original's,
/// breaking ties by generation order.
pub fn select_closest(
    original: &Prefix,
    candidates: &[Vec<String>],
    manifold: &ClassManifold,
    vocab: &ActivityVocabulary,
) -> Result<SelectedCandidate, AttackError> {
    if candidates.is_empty() {
        return Err(AttackError::EmptyCandidates);
    }
    let original_mu = manifold.encode(original, vocab)?.mu;
    let mut best: Option<SelectedCandidate> = None;
    for (index, candidate) in candidates.iter().enumerate() {
        let mu = manifold.encode_activities(candidate, vocab)?.mu;
        let distance = euclidean(&original_mu, &mu)?;
        if best.as_ref().is_none_or(|b| distance < b.latent_distance) {
            best = Some(SelectedCandidate {
                index,
                activities: candidate.clone(),
                latent_distance: distance,
            });
        }
    }
    Ok(best.expect("nonempty candidates"))
}

/// Why a result row has no usable adversarial sequence, or confirmation
/// that it does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    /// An adversarial sequence was generated and evaluated.
    Generated,
    /// The generator produced no usable candidate.
    NoCandidates,
    /// The gradient search exhausted its iteration budget without a flip.
    BudgetExhausted,
}

impl fmt::Display for AttackStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AttackStatus::Generated => "generated",
            AttackStatus::NoCandidates => "no_candidates",
            AttackStatus::BudgetExhausted => "budget_exhausted",
        };
        f.write_str(name)
    }
}

impl AttackStatus {
    pub fn parse(text: &str) -> Option<AttackStatus> {
        match text {
            "generated" => Some(AttackStatus::Generated),
            "no_candidates" => Some(AttackStatus::NoCandidates),
            "budget_exhausted" => Some(AttackStatus::BudgetExhausted),
            _ => None,
        }
    }
}

/// One attacked prefix: the original, the selected adversarial sequence and
/// everything needed to judge the attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult {
    pub original: Prefix,
    /// Selected adversarial activity sequence; empty when `status` is not
    /// [`AttackStatus::Generated`].
    pub adversarial: Vec<String>,
    pub attack_name: String,
    pub strategy_name: String,
    pub original_prob: f64,
    pub adversarial_prob: Option<f64>,
    /// Whether the thresholded prediction changed.
    pub flipped: bool,
    /// Euclidean distance between the posterior means.
    pub latent_distance: Option<f64>,
    /// Usable candidates after filtering.
    pub candidate_count: usize,
    pub status: AttackStatus,
}

/// The per-class manifolds an attack works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPair {
    negative: ClassManifold,
    positive: ClassManifold,
}

impl ManifoldPair {
    pub fn new(negative: ClassManifold, positive: ClassManifold) -> Result<ManifoldPair, AttackError> {
        if negative.label != Outcome::Negative || positive.label != Outcome::Positive {
            return Err(AttackError::InvalidConfig {
                reason: "manifold labels do not match their slots".into(),
            });
        }
        if negative.vocab_fingerprint != positive.vocab_fingerprint {
            return Err(AttackError::VocabularyMismatch { context: "the two manifolds" });
        }
        if negative.config.max_length != positive.config.max_length {
            return Err(AttackError::ShapeMismatch {
                reason: "manifolds disagree on the maximum prefix length".into(),
            });
        }
        Ok(ManifoldPair { negative, positive })
    }

    pub fn for_label(&self, label: Outcome) -> &ClassManifold {
        match label {
            Outcome::Negative => &self.negative,
            Outcome::Positive => &self.positive,
        }
    }

    pub fn max_length(&self) -> usize {
        self.negative.config.max_length
    }
}

/// Runs one attack configuration over a test prefix log.
///
/// Only prefixes the classifier predicts correctly are attacked (an
/// adversarial example is defined against a correct prediction). Candidates
/// equal to the original sequence, empty decodes and duplicates are
/// discarded before selection; prefixes whose generator produced nothing
/// still yield a row, with a failure status, so success rates keep the
/// whole attacked pool in the denominator.
pub fn generate_adversarials(
    test: &PrefixLog,
    classifier: &Classifier,
    manifolds: &ManifoldPair,
    table: Option<&PositionActivityTable>,
    vocab: &ActivityVocabulary,
    config: &AttackConfig,
) -> Result<Vec<AdversarialResult>, AttackError> {
    config.validate()?;
    if config.strategy == AttackStrategy::GradientBased
        && classifier.kind() != ClassifierKind::Recurrent
    {
        return Err(AttackError::UnsupportedClassifier { kind: classifier.kind() });
    }
    let fingerprint = vocab.fingerprint();
    if classifier.vocab_fingerprint != fingerprint {
        return Err(AttackError::VocabularyMismatch { context: "classifier and vocabulary" });
    }
    if manifolds.negative.vocab_fingerprint != fingerprint {
        return Err(AttackError::VocabularyMismatch { context: "manifolds and vocabulary" });
    }
    let needs_table = matches!(config.strategy, AttackStrategy::Regular | AttackStrategy::Projected)
        && config.attack_type == AttackType::KEvent;
    if needs_table && table.is_none() {
        return Err(AttackError::MissingTable);
    }
    let max_length = manifolds.max_length();
    if let Some(net) = classifier.recurrent() {
        if net.steps() != max_length + 1 {
            return Err(AttackError::ShapeMismatch {
                reason: format!(
                    "recurrent classifier consumes {} rows but the manifolds pad to {}",
                    net.steps(),
                    max_length + 1
                ),
            });
        }
    }

    let mut results = Vec::new();
    for prefix in &test.prefixes {
        let (original_prob, predicted) =
            predict_activities(classifier, &prefix.activities, vocab, max_length)?;
        if predicted != prefix.label {
            continue; // label-invariance gating: only correct predictions are attacked
        }
        let manifold = manifolds.for_label(prefix.label);
        let mut rng = seeding::prefix_rng(
            config.seed,
            &config.method_identity(),
            &prefix.case_id,
            prefix.activities.len(),
        );

        let mut budget_exhausted = false;
        let raw_candidates: Vec<Vec<String>> = match config.strategy {
            AttackStrategy::Regular | AttackStrategy::Projected => {
                let raw = match config.attack_type {
                    AttackType::LastEvent => {
                        permute_last_event(prefix, vocab, &mut rng, config.nr_adv)
                    }
                    AttackType::AllEvent => {
                        permute_all_events(prefix, vocab, &mut rng, config.nr_adv)
                    }
                    AttackType::KEvent => permute_k_events(
                        prefix,
                        config.k_events,
                        table.expect("presence checked above"),
                        &mut rng,
                        config.nr_adv,
                    ),
                };
                if config.strategy == AttackStrategy::Projected {
                    raw.iter()
                        .map(|candidate| project(manifold, candidate, vocab))
                        .collect::<Result<_, _>>()?
                } else {
                    raw
                }
            }
            AttackStrategy::LatentSampled => {
                latent_sampling_attack(manifold, prefix, vocab, config.nr_adv, &mut rng)?
            }
            AttackStrategy::GradientBased => {
                let found =
                    gradient_steps_attack(manifold, classifier, prefix, vocab, config)?;
                budget_exhausted = found.is_none();
                found.into_iter().collect()
            }
        };

        let mut candidates: Vec<Vec<String>> = Vec::new();
        for candidate in raw_candidates {
            if candidate.is_empty() || candidate == prefix.activities {
                continue;
            }
            if !candidates.contains(&candidate) {
                candidates.push(candidate);
            }
        }

        if candidates.is_empty() {
            let status = if budget_exhausted {
                AttackStatus::BudgetExhausted
            } else {
                AttackStatus::NoCandidates
            };
            results.push(AdversarialResult {
                original: prefix.clone(),
                adversarial: Vec::new(),
                attack_name: config.attack_name().to_string(),
                strategy_name: config.strategy.name().to_string(),
                original_prob,
                adversarial_prob: None,
                flipped: false,
                latent_distance: None,
                candidate_count: 0,
                status,
            });
            continue;
        }

        let selected = select_closest(prefix, &candidates, manifold, vocab)?;
        let (adversarial_prob, adversarial_label) =
            predict_activities(classifier, &selected.activities, vocab, max_length)?;
        results.push(AdversarialResult {
            original: prefix.clone(),
            adversarial: selected.activities,
            attack_name: config.attack_name().to_string(),
            strategy_name: config.strategy.name().to_string(),
            original_prob,
            adversarial_prob: Some(adversarial_prob),
            flipped: adversarial_label != predicted,
            latent_distance: Some(selected.latent_distance),
            candidate_count: candidates.len(),
            status: AttackStatus::Generated,
        });
    }
    Ok(results)
}

/// Thresholded prediction of a raw activity sequence under either input
/// encoding.
pub fn predict_activities(
    classifier: &Classifier,
    activities: &[String],
    vocab: &ActivityVocabulary,
    max_length: usize,
) -> Result<(f64, Outcome), AttackError> {
    match classifier.input_mode() {
        InputMode::Aggregated => {
            let vector = aggregate_encode_activities(activities, vocab)?;
            Ok(classifier.predict(&EncodedInstance::Aggregated(&vector))?)
        }
        InputMode::Sequence => {
            let matrix = onehot_encode_activities(activities, vocab, max_length)?;
            Ok(classifier.predict(&EncodedInstance::Sequence(&matrix))?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{train_classifier, Hyperparams, LinearParams};
    use crate::manifold::VaeConfig;

    fn vocab3() -> ActivityVocabulary {
        ActivityVocabulary::from_activities(vec!["a".into(), "b".into(), "c".into()])
    }

    fn prefix(case: &str, activities: &[&str], label: Outcome) -> Prefix {
        Prefix {
            case_id: case.into(),
            activities: activities.iter().map(|s| s.to_string()).collect(),
            label,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        seeding::stream_rng(seed, "attack-test")
    }

    #[test]
    fn position_activity_table_matches_brute_force() {
        let prefixes = vec![
            prefix("1", &["a", "b"], Outcome::Negative),
            prefix("2", &["a", "c"], Outcome::Positive),
            prefix("3", &["a"], Outcome::Negative),
        ];
        let log = PrefixLog::from_prefixes(prefixes);
        let table = build_position_activity_table(&log);
        // Brute-force enumeration of every (position, activity) pair.
        let mut expected: BTreeSet<(usize, String)> = BTreeSet::new();
        for p in &log.prefixes {
            for (offset, activity) in p.activities.iter().enumerate() {
                expected.insert((offset + 1, activity.clone()));
            }
        }
        for &(position, ref activity) in &expected {
            assert!(table.contains(position, activity));
        }
        assert!(!table.contains(1, "b"), "b never occurs at position 1");
        assert!(!table.contains(3, "a"), "no prefix reaches position 3");
        let at1: Vec<&str> = table.admissible_at(1).collect();
        assert_eq!(at1, vec!["a"]);
        let at2: Vec<&str> = table.admissible_at(2).collect();
        assert_eq!(at2, vec!["b", "c"]);
    }

    #[test]
    fn last_event_generates_exactly_the_final_substitutions() {
        let p = prefix("1", &["a", "b"], Outcome::Negative);
        let candidates = permute_last_event(&p, &vocab3(), &mut rng(1), 16);
        let mut as_set: Vec<Vec<String>> = candidates.clone();
        as_set.sort();
        assert_eq!(
            as_set,
            vec![
                vec!["a".to_string(), "a".to_string()],
                vec!["a".to_string(), "c".to_string()],
            ]
        );
        for candidate in &candidates {
            assert_eq!(candidate[..1], p.activities[..1], "only the last position may change");
            assert_ne!(candidate[1], p.activities[1]);
        }
        // The count is bounded by the vocabulary size minus one.
        assert!(candidates.len() <= vocab3().n_activities() - 1);
        // nr_adv truncates deterministically.
        let one = permute_last_event(&p, &vocab3(), &mut rng(1), 1);
        assert_eq!(one.len(), 1);
        let again = permute_last_event(&p, &vocab3(), &mut rng(1), 1);
        assert_eq!(one, again);
    }

    #[test]
    fn last_event_on_unary_vocabulary_is_empty() {
        let vocab = ActivityVocabulary::from_activities(vec!["a".into()]);
        let p = prefix("1", &["a", "a"], Outcome::Negative);
        assert!(permute_last_event(&p, &vocab, &mut rng(2), 4).is_empty());
    }

    #[test]
    fn all_events_changes_every_position() {
        let binary = ActivityVocabulary::from_activities(vec!["a".into(), "b".into()]);
        let p = prefix("1", &["a", "b"], Outcome::Negative);
        let candidates = permute_all_events(&p, &binary, &mut rng(3), 8);
        assert_eq!(candidates, vec![vec!["b".to_string(), "a".to_string()]]);

        let p3 = prefix("2", &["a", "b", "c"], Outcome::Positive);
        let candidates = permute_all_events(&p3, &vocab3(), &mut rng(4), 16);
        assert!(!candidates.is_empty());
        for candidate in &candidates {
            for (new, old) in candidate.iter().zip(&p3.activities) {
                assert_ne!(new, old, "every position must change");
            }
        }
        let replay = permute_all_events(&p3, &vocab3(), &mut rng(4), 16);
        assert_eq!(candidates, replay);
    }

    #[test]
    fn k_events_respects_table_and_position_budget() {
        let train = PrefixLog::from_prefixes(vec![
                prefix("1", &["a", "b", "c"], Outcome::Negative),
                prefix("2", &["b", "b", "a"], Outcome::Positive),
                prefix("3", &["c", "a"], Outcome::Negative),
            ]);
        let table = build_position_activity_table(&train);
        let p = prefix("t", &["a", "b", "c"], Outcome::Negative);
        let candidates = permute_k_events(&p, 2, &table, &mut rng(5), 32);
        assert!(!candidates.is_empty());
        for candidate in &candidates {
            let modified: Vec<usize> = candidate
                .iter()
                .zip(&p.activities)
                .enumerate()
                .filter(|(_, (new, old))| new != old)
                .map(|(i, _)| i + 1)
                .collect();
            assert!((1..=2).contains(&modified.len()), "k = 2 allows 1..=2 modifications");
            for &position in &modified {
                assert!(
                    table.contains(position, &candidate[position - 1]),
                    "({position}, {}) must be an observed pair",
                    candidate[position - 1]
                );
            }
        }
    }

    #[test]
    fn k_events_with_a_single_admissible_position_modifies_exactly_one() {
        // Table from a log where only position 2 ever varies.
        let train = PrefixLog::from_prefixes(vec![
                prefix("1", &["a", "b"], Outcome::Negative),
                prefix("2", &["a", "c"], Outcome::Positive),
            ]);
        let table = build_position_activity_table(&train);
        let p = prefix("t", &["a", "b"], Outcome::Negative);
        let candidates = permute_k_events(&p, 3, &table, &mut rng(6), 16);
        assert_eq!(candidates, vec![vec!["a".to_string(), "c".to_string()]]);
    }

    #[test]
    fn k_events_without_admissible_pairs_is_empty() {
        let train = PrefixLog::from_prefixes(vec![prefix("1", &["a", "a"], Outcome::Negative)]);
        let table = build_position_activity_table(&train);
        let p = prefix("t", &["a", "a"], Outcome::Negative);
        assert!(permute_k_events(&p, 3, &table, &mut rng(7), 16).is_empty());
    }

    #[test]
    fn select_closest_matches_a_brute_force_oracle() {
        let vocab = vocab3();
        let config =
            VaeConfig { latent_dim: 5, hidden_size: 8, max_length: 6, ..VaeConfig::default() };
        let manifold = ClassManifold::untrained_for_tests(vocab.size(), config, 41);
        let original = prefix("o", &["a", "b", "c"], Outcome::Negative);
        // Ten random in-vocabulary candidates of varying length.
        let mut r = rng(8);
        let names = ["a", "b", "c"];
        let candidates: Vec<Vec<String>> = (0..10)
            .map(|_| {
                let len = r.gen_range(1..=6);
                (0..len).map(|_| names[r.gen_range(0..3)].to_string()).collect()
            })
            .collect();
        let selected = select_closest(&original, &candidates, &manifold, &vocab).unwrap();
        // Brute force: encode everything, scan for the minimum.
        let mu0 = manifold.encode(&original, &vocab).unwrap().mu;
        let distances: Vec<f64> = candidates
            .iter()
            .map(|c| euclidean(&mu0, &manifold.encode_activities(c, &vocab).unwrap().mu).unwrap())
            .collect();
        let mut best_index = 0;
        for (i, &d) in distances.iter().enumerate() {
            if d < distances[best_index] {
                best_index = i;
            }
        }
        assert_eq!(selected.index, best_index);
        assert_eq!(selected.activities, candidates[best_index]);
        assert!((selected.latent_distance - distances[best_index]).abs() < 1e-12);
        assert!(matches!(
            select_closest(&original, &[], &manifold, &vocab),
            Err(AttackError::EmptyCandidates)
        ));
    }

    /// Linear classifier on a binary vocabulary: positive iff any "b"
    /// occurs. Untrained manifolds supply deterministic latent coordinates.
    fn toy_setup() -> (ActivityVocabulary, Classifier, ManifoldPair, PrefixLog) {
        let vocab = ActivityVocabulary::from_activities(vec!["a".into(), "b".into()]);
        let train: Vec<(&[&str], Outcome)> = vec![
            (&["a", "a"], Outcome::Negative),
            (&["a"], Outcome::Negative),
            (&["a", "a", "a"], Outcome::Negative),
            (&["a", "b"], Outcome::Positive),
            (&["b", "a"], Outcome::Positive),
            (&["b", "b"], Outcome::Positive),
        ];
        let prefixes: Vec<Prefix> = train
            .iter()
            .enumerate()
            .map(|(i, (acts, label))| prefix(&format!("c{i}"), acts, *label))
            .collect();
        let log = PrefixLog::from_prefixes(prefixes);
        let dataset =
            crate::classifiers::encode_dataset(&log, &vocab, InputMode::Aggregated, 6).unwrap();
        let classifier = train_classifier(
            &dataset,
            &Hyperparams::Linear(LinearParams { learning_rate: 0.5, epochs: 500, l2: 0.0 }),
            0,
        )
        .unwrap();
        let config =
            VaeConfig { latent_dim: 4, hidden_size: 8, max_length: 6, ..VaeConfig::default() };
        let mut negative = ClassManifold::untrained_for_tests(vocab.size(), config.clone(), 51);
        negative.vocab_fingerprint = vocab.fingerprint();
        let mut positive = ClassManifold::untrained_for_tests(vocab.size(), config, 52);
        positive.label = Outcome::Positive;
        positive.vocab_fingerprint = vocab.fingerprint();
        let manifolds = ManifoldPair::new(negative, positive).unwrap();
        (vocab, classifier, manifolds, log)
    }

    #[test]
    fn generation_gates_on_correct_predictions_and_flips_are_recomputable() {
        let (vocab, classifier, manifolds, log) = toy_setup();
        // One deliberately mislabeled prefix: [a, a] marked positive is
        // predicted negative, so it must never be attacked.
        let mut test = log.clone();
        test.prefixes.push(prefix("wrong", &["a", "a"], Outcome::Positive));
        let config = AttackConfig {
            strategy: AttackStrategy::Regular,
            attack_type: AttackType::LastEvent,
            nr_adv: 4,
            seed: 9,
            ..AttackConfig::default()
        };
        let results =
            generate_adversarials(&test, &classifier, &manifolds, None, &vocab, &config)
                .unwrap();
        assert_eq!(results.len(), log.prefixes.len(), "only the 6 correct predictions");
        assert!(results.iter().all(|r| r.original.case_id != "wrong"));
        for result in &results {
            assert_eq!(result.status, AttackStatus::Generated);
            assert_eq!(result.candidate_count, 1, "binary vocabulary: one substitution");
            // A1 on a binary vocabulary flips exactly the last activity.
            let original = &result.original.activities;
            let adversarial = &result.adversarial;
            assert_eq!(adversarial.len(), original.len());
            assert_eq!(adversarial[..original.len() - 1], original[..original.len() - 1]);
            assert_ne!(adversarial[original.len() - 1], original[original.len() - 1]);
            // Flip flag must agree with an independent re-prediction.
            let (_, original_label) =
                predict_activities(&classifier, original, &vocab, 6).unwrap();
            let (_, adversarial_label) =
                predict_activities(&classifier, adversarial, &vocab, 6).unwrap();
            assert_eq!(result.flipped, original_label != adversarial_label);
            assert!(result.latent_distance.unwrap() >= 0.0);
        }
        // Deterministic end to end.
        let replay =
            generate_adversarials(&test, &classifier, &manifolds, None, &vocab, &config)
                .unwrap();
        assert_eq!(results, replay);
    }

    #[test]
    fn unary_vocabulary_yields_failure_rows_not_errors() {
        let vocab = ActivityVocabulary::from_activities(vec!["a".into()]);
        let log = PrefixLog::from_prefixes(vec![
                prefix("1", &["a"], Outcome::Negative),
                prefix("2", &["a", "a"], Outcome::Positive),
            ]);
        let dataset =
            crate::classifiers::encode_dataset(&log, &vocab, InputMode::Aggregated, 4).unwrap();
        let classifier =
            train_classifier(&dataset, &Hyperparams::default_for(ClassifierKind::Linear), 0)
                .unwrap();
        let config =
            VaeConfig { latent_dim: 3, hidden_size: 6, max_length: 4, ..VaeConfig::default() };
        let mut negative = ClassManifold::untrained_for_tests(vocab.size(), config.clone(), 61);
        negative.vocab_fingerprint = vocab.fingerprint();
        let mut positive = ClassManifold::untrained_for_tests(vocab.size(), config, 62);
        positive.label = Outcome::Positive;
        positive.vocab_fingerprint = vocab.fingerprint();
        let manifolds = ManifoldPair::new(negative, positive).unwrap();
        let config = AttackConfig {
            strategy: AttackStrategy::Regular,
            attack_type: AttackType::LastEvent,
            seed: 10,
            ..AttackConfig::default()
        };
        let results =
            generate_adversarials(&log, &classifier, &manifolds, None, &vocab, &config).unwrap();
        for result in &results {
            assert_eq!(result.status, AttackStatus::NoCandidates);
            assert!(!result.flipped);
            assert!(result.adversarial.is_empty());
            assert_eq!(result.candidate_count, 0);
        }
    }

    #[test]
    fn gradient_strategy_rejects_non_recurrent_classifiers() {
        let (vocab, classifier, manifolds, log) = toy_setup();
        let config = AttackConfig {
            strategy: AttackStrategy::GradientBased,
            ..AttackConfig::default()
        };
        let err = generate_adversarials(&log, &classifier, &manifolds, None, &vocab, &config)
            .unwrap_err();
        assert!(matches!(err, AttackError::UnsupportedClassifier { .. }));
    }

    #[test]
    fn k_event_strategy_requires_a_table() {
        let (vocab, classifier, manifolds, log) = toy_setup();
        let config = AttackConfig {
            strategy: AttackStrategy::Regular,
            attack_type: AttackType::KEvent,
            ..AttackConfig::default()
        };
        let err = generate_adversarials(&log, &classifier, &manifolds, None, &vocab, &config)
            .unwrap_err();
        assert!(matches!(err, AttackError::MissingTable));
    }

    #[test]
    fn latent_sampling_discards_reconstructions_and_is_deterministic() {
        let (vocab, _, manifolds, log) = toy_setup();
        let manifold = manifolds.for_label(Outcome::Negative);
        let p = &log.prefixes[0];
        let a = latent_sampling_attack(manifold, p, &vocab, 12, &mut rng(13)).unwrap();
        let b = latent_sampling_attack(manifold, p, &vocab, 12, &mut rng(13)).unwrap();
        assert_eq!(a, b);
        for candidate in &a {
            assert_ne!(candidate, &p.activities);
            assert!(!candidate.is_empty());
        }
    }

    #[test]
    fn projection_is_deterministic_and_length_free() {
        let (vocab, _, manifolds, _) = toy_setup();
        let manifold = manifolds.for_label(Outcome::Negative);
        let candidate: Vec<String> = vec!["a".into(), "b".into(), "a".into()];
        let first = project(manifold, &candidate, &vocab).unwrap();
        let second = project(manifold, &candidate, &vocab).unwrap();
        assert_eq!(first, second);
        assert!(first.len() <= manifold.config.max_length);
    }
}
