//! Prefix encodings.
//!
//! Two views of a prefix feed the models: an aggregated activity-count
//! vector (order-free) and a padded one-hot sequence matrix (order-aware).
//! The sequence alphabet reserves index 0 for padding and index 1 for the
//! end-of-sequence marker; real activities start at index 2.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::eventlog::{EventLog, Prefix};
use crate::seeding::fnv1a64;

/// Index of the padding symbol in sequence encodings.
pub const PAD_INDEX: usize = 0;
/// Index of the end-of-sequence symbol in sequence encodings.
pub const EOS_INDEX: usize = 1;
/// Number of reserved symbols before real activities.
pub const RESERVED: usize = 2;

/// Ordered activity alphabet with reserved padding and end-of-sequence
/// symbols. Serializes as the plain activity list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct ActivityVocabulary {
    activities: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for ActivityVocabulary {
    fn from(activities: Vec<String>) -> Self {
        ActivityVocabulary::from_activities(activities)
    }
}

impl From<ActivityVocabulary> for Vec<String> {
    fn from(vocab: ActivityVocabulary) -> Self {
        vocab.activities
    }
}

impl ActivityVocabulary {
    /// Builds the vocabulary from a log, keeping the log's first-occurrence
    /// activity order.
    pub fn from_log(log: &EventLog) -> ActivityVocabulary {
        ActivityVocabulary::from_activities(log.vocabulary.clone())
    }

    pub fn from_activities(activities: Vec<String>) -> ActivityVocabulary {
        let index = activities
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i + RESERVED))
            .collect();
        ActivityVocabulary { activities, index }
    }

    /// Number of real activities.
    pub fn n_activities(&self) -> usize {
        self.activities.len()
    }

    /// Total symbol count including padding and end-of-sequence.
    pub fn size(&self) -> usize {
        self.activities.len() + RESERVED
    }

    /// Sequence-encoding index of an activity (&ge; 2), if known.
    pub fn index_of(&self, activity: &str) -> Option<usize> {
        self.index.get(activity).copied()
    }

    /// Position of an activity within the real-activity range (0-based,
    /// without the reserved offset), if known. This is the histogram /
    /// aggregated-vector index.
    pub fn rank_of(&self, activity: &str) -> Option<usize> {
        self.index_of(activity).map(|i| i - RESERVED)
    }

    /// Activity name for a sequence-encoding index, if it denotes a real
    /// activity.
    pub fn activity_at(&self, index: usize) -> Option<&str> {
        if index < RESERVED {
            None
        } else {
            self.activities.get(index - RESERVED).map(|s| s.as_str())
        }
    }

    /// Real activity names in vocabulary order.
    pub fn activities(&self) -> &[String] {
        &self.activities
    }

    /// Stable fingerprint of the alphabet, used to guard artifact
    /// compatibility.
    pub fn fingerprint(&self) -> u64 {
        let joined = self.activities.join("\u{1f}");
        fnv1a64(joined.as_bytes())
    }
}

/// Errors raised by encoding operations.
#[derive(Debug, thiserror::Error)]
pub enum EncodingError {
    #[error("activity {activity:?} is not in the vocabulary")]
    UnknownActivity { activity: String },
    #[error("prefix of length {length} exceeds the maximum length {max_length}")]
    TooLong { length: usize, max_length: usize },
    #[error("prefix is empty")]
    Empty,
    #[error("probability rows have {cols} columns, vocabulary needs {expected}")]
    ShapeMismatch { cols: usize, expected: usize },
}

/// Order-free activity-count encoding of a prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedVector {
    /// Count per real activity, in vocabulary order.
    pub counts: Vec<u32>,
}

impl AggregatedVector {
    /// Counts as floats, for numeric models.
    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Total event count (the prefix length).
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Counts each activity's occurrences. The vector has one slot per real
/// activity in vocabulary order; its total equals the prefix length.
pub fn aggregate_encode(prefix: &Prefix, vocab: &ActivityVocabulary) -> Result<AggregatedVector, EncodingError> {
    aggregate_encode_activities(&prefix.activities, vocab)
}

/// As [`aggregate_encode`] but over a raw activity sequence.
pub fn aggregate_encode_activities(
    activities: &[String],
    vocab: &ActivityVocabulary,
) -> Result<AggregatedVector, EncodingError> {
    let mut counts = vec![0u32; vocab.n_activities()];
    for activity in activities {
        let rank = vocab
            .rank_of(activity)
            .ok_or_else(|| EncodingError::UnknownActivity { activity: activity.clone() })?;
        counts[rank] += 1;
    }
    Ok(AggregatedVector { counts })
}

/// Padded one-hot sequence encoding of a prefix.
///
/// `rows` has `max_length + 1` rows and `vocab.size()` columns: one row per
/// activity, then an end-of-sequence row, then padding rows. `mask` is true
/// for the activity and end-of-sequence rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    pub rows: Array2<f64>,
    /// Number of meaningful rows: prefix length + 1 (the end marker).
    pub valid_length: usize,
    pub mask: Vec<bool>,
}

impl SequenceMatrix {
    /// Prefix length in events (excluding the end marker).
    pub fn prefix_length(&self) -> usize {
        self.valid_length - 1
    }

    /// Total row count (`max_length + 1`).
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }
}

/// One-hot encodes a prefix against a fixed maximum length.
pub fn onehot_encode(
    prefix: &Prefix,
    vocab: &ActivityVocabulary,
    max_length: usize,
) -> Result<SequenceMatrix, EncodingError> {
    onehot_encode_activities(&prefix.activities, vocab, max_length)
}

/// As [`onehot_encode`] but over a raw activity sequence.
pub fn onehot_encode_activities(
    activities: &[String],
    vocab: &ActivityVocabulary,
    max_length: usize,
) -> Result<SequenceMatrix, EncodingError> {
    let length = activities.len();
    if length == 0 {
        return Err(EncodingError::Empty);
    }
    if length > max_length {
        return Err(EncodingError::TooLong { length, max_length });
    }
    let n_rows = max_length + 1;
    let mut rows = Array2::zeros((n_rows, vocab.size()));
    for (t, activity) in activities.iter().enumerate() {
        let index = vocab
            .index_of(activity)
            .ok_or_else(|| EncodingError::UnknownActivity { activity: activity.clone() })?;
        rows[(t, index)] = 1.0;
    }
    rows[(length, EOS_INDEX)] = 1.0;
    for t in (length + 1)..n_rows {
        rows[(t, PAD_INDEX)] = 1.0;
    }
    let mut mask = vec![false; n_rows];
    for flag in mask.iter_mut().take(length + 1) {
        *flag = true;
    }
    Ok(SequenceMatrix { rows, valid_length: length + 1, mask })
}

/// How a decoded sequence terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Terminated by an end-of-sequence symbol.
    EndOfSequence,
    /// A padding symbol appeared before any end marker; treated as an end
    /// marker but flagged as irregular.
    IrregularPadding,
    /// No end or padding symbol appeared within the row budget.
    Unterminated,
}

/// An activity sequence recovered from probability rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSequence {
    pub activities: Vec<String>,
    pub termination: Termination,
}

/// Recovers an activity sequence from per-position probability rows by
/// greedy argmax; ties resolve to the lowest index. The sequence is
/// truncated at the first end-of-sequence symbol. A padding symbol before
/// any end marker also terminates the sequence but is flagged as irregular;
/// if neither appears the result is flagged unterminated.
pub fn decode_sequence(
    rows: &Array2<f64>,
    vocab: &ActivityVocabulary,
) -> Result<DecodedSequence, EncodingError> {
    if rows.ncols() != vocab.size() {
        return Err(EncodingError::ShapeMismatch { cols: rows.ncols(), expected: vocab.size() });
    }
    let mut activities = Vec::new();
    for row in rows.rows() {
        let symbol = argmax_lowest(row.as_slice().expect("rows are contiguous"));
        match symbol {
            EOS_INDEX => {
                return Ok(DecodedSequence { activities, termination: Termination::EndOfSequence })
            }
            PAD_INDEX => {
                return Ok(DecodedSequence { activities, termination: Termination::IrregularPadding })
            }
            index => {
                let activity = vocab
                    .activity_at(index)
                    .expect("argmax index within vocabulary size")
                    .to_string();
                activities.push(activity);
            }
        }
    }
    Ok(DecodedSequence { activities, termination: Termination::Unterminated })
}

/// Index of the row maximum; ties resolve to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
