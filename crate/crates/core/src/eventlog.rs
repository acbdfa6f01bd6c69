//! Event logs, traces and prefix logs.
//!
//! An event log is a collection of traces; a trace is the time-ordered event
//! sequence of one case, carrying a binary outcome label. Prefix logs hold
//! the truncated heads of traces that prediction models consume. This module
//! owns CSV ingestion/serialization, temporal train/test splitting, prefix
//! extraction, deduplication and synthetic log generation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeding;

/// Binary case outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Negative,
    Positive,
}

impl Outcome {
    /// Class index: 0 for negative, 1 for positive.
    pub fn index(self) -> usize {
        match self {
            Outcome::Negative => 0,
            Outcome::Positive => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Outcome> {
        match index {
            0 => Some(Outcome::Negative),
            1 => Some(Outcome::Positive),
            _ => None,
        }
    }

    /// The opposite label.
    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::Negative => Outcome::Positive,
            Outcome::Positive => Outcome::Negative,
        }
    }

    pub const BOTH: [Outcome; 2] = [Outcome::Negative, Outcome::Positive];
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Event timestamps are stored as integer ticks (milliseconds since the Unix
/// epoch when parsed from ISO-8601 text, raw ticks otherwise).
pub type Ticks = i64;

/// How timestamps appear in CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampFormat {
    /// ISO-8601 / RFC 3339 text; serialized canonically as UTC with
    /// millisecond precision.
    #[default]
    Iso8601,
    /// Plain integer ticks.
    Ticks,
}

/// One executed activity within a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    /// Case the event belongs to.
    pub case_id: String,
    /// Activity label.
    pub activity: String,
    /// Completion timestamp.
    pub timestamp: Ticks,
    /// 1-based position within the trace, assigned after time-ordering.
    pub position: usize,
}

/// The full event sequence of one case plus its outcome label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    pub label: Outcome,
}

impl Trace {
    /// Trace length in events.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamp of the first event.
    pub fn start_time(&self) -> Ticks {
        self.events.first().map(|e| e.timestamp).unwrap_or(Ticks::MAX)
    }

    /// Activity labels in order.
    pub fn activities(&self) -> Vec<String> {
        self.events.iter().map(|e| e.activity.clone()).collect()
    }
}

/// A collection of traces with a deterministic activity vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventLog {
    pub traces: Vec<Trace>,
    /// Activity labels in first-occurrence order.
    pub vocabulary: Vec<String>,
    /// Non-fatal notes recorded while building the log (e.g. degenerate
    /// generator specs).
    pub warnings: Vec<String>,
}

impl EventLog {
    /// Builds a log from traces, deriving the vocabulary in first-occurrence
    /// order and validating invariants.
    pub fn from_traces(traces: Vec<Trace>) -> Result<EventLog, IngestError> {
        let mut seen_cases = HashSet::new();
        for trace in &traces {
            if !seen_cases.insert(trace.case_id.clone()) {
                return Err(IngestError::DuplicateCase { case_id: trace.case_id.clone() });
            }
            if trace.events.is_empty() {
                return Err(IngestError::EmptyTrace { case_id: trace.case_id.clone() });
            }
            for (i, event) in trace.events.iter().enumerate() {
                if event.position != i + 1 {
                    return Err(IngestError::BrokenPositions { case_id: trace.case_id.clone() });
                }
                if i > 0 && event.timestamp < trace.events[i - 1].timestamp {
                    return Err(IngestError::UnorderedEvents { case_id: trace.case_id.clone() });
                }
                if event.case_id != trace.case_id {
                    return Err(IngestError::BrokenPositions { case_id: trace.case_id.clone() });
                }
            }
        }
        let vocabulary = first_occurrence_vocabulary(&traces);
        Ok(EventLog { traces, vocabulary, warnings: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Fraction of traces labeled positive.
    pub fn positive_class_ratio(&self) -> f64 {
        if self.traces.is_empty() {
            return 0.0;
        }
        let positives = self.traces.iter().filter(|t| t.label == Outcome::Positive).count();
        positives as f64 / self.traces.len() as f64
    }
}

fn first_occurrence_vocabulary(traces: &[Trace]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut vocabulary = Vec::new();
    for trace in traces {
        for event in &trace.events {
            if seen.insert(event.activity.clone()) {
                vocabulary.push(event.activity.clone());
            }
        }
    }
    vocabulary
}

/// A truncated trace head carrying the full-trace label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prefix {
    pub case_id: String,
    /// Activity labels of the first `length` events.
    pub activities: Vec<String>,
    pub label: Outcome,
}

impl Prefix {
    pub fn length(&self) -> usize {
        self.activities.len()
    }
}

/// All prefixes extracted from a log under one length policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixLog {
    pub prefixes: Vec<Prefix>,
    pub min_length: usize,
    pub max_length: usize,
}

impl PrefixLog {
    /// Wraps a prefix list, deriving the length bounds from the contents.
    pub fn from_prefixes(prefixes: Vec<Prefix>) -> PrefixLog {
        let min_length = prefixes.iter().map(|p| p.activities.len()).min().unwrap_or(0);
        let max_length = prefixes.iter().map(|p| p.activities.len()).max().unwrap_or(0);
        PrefixLog { prefixes, min_length, max_length }
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// Prefixes of one class, in log order.
    pub fn of_class(&self, label: Outcome) -> Vec<&Prefix> {
        self.prefixes.iter().filter(|p| p.label == label).collect()
    }
}

/// Column names and value mappings for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub case_column: String,
    pub activity_column: String,
    pub timestamp_column: String,
    pub label_column: String,
    #[serde(default)]
    pub timestamp_format: TimestampFormat,
    /// Raw label value mapped to the positive class.
    pub positive_value: String,
    /// Raw label value mapped to the negative class.
    pub negative_value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            case_column: "case_id".into(),
            activity_column: "activity".into(),
            timestamp_column: "timestamp".into(),
            label_column: "label".into(),
            timestamp_format: TimestampFormat::Iso8601,
            positive_value: "1".into(),
            negative_value: "0".into(),
        }
    }
}

/// Errors raised while building or parsing event logs.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {column:?}")]
    MissingColumn { column: String },
    #[error("row {row}: unparseable timestamp {value:?} (case {case_id:?})")]
    BadTimestamp { row: usize, value: String, case_id: String },
    #[error("row {row}: label {value:?} matches neither configured label value (case {case_id:?})")]
    BadLabel { row: usize, value: String, case_id: String },
    #[error("case {case_id:?} carries conflicting labels")]
    ConflictingLabels { case_id: String },
    #[error("case {case_id:?} appears more than once")]
    DuplicateCase { case_id: String },
    #[error("case {case_id:?} has no events")]
    EmptyTrace { case_id: String },
    #[error("case {case_id:?} has events out of time order")]
    UnorderedEvents { case_id: String },
    #[error("case {case_id:?} has inconsistent event positions")]
    BrokenPositions { case_id: String },
    #[error("log is empty")]
    EmptyLog,
}

fn parse_timestamp(value: &str, format: TimestampFormat) -> Option<Ticks> {
    match format {
        TimestampFormat::Ticks => value.trim().parse::<i64>().ok(),
        TimestampFormat::Iso8601 => {
            let trimmed = value.trim();
            if let Ok(dt) = DateTime::parse_from_rfc3339(trimmed) {
                return Some(dt.with_timezone(&Utc).timestamp_millis());
            }
            for pattern in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
                if let Ok(naive) = NaiveDateTime::parse_from_str(trimmed, pattern) {
                    return Some(naive.and_utc().timestamp_millis());
                }
            }
            None
        }
    }
}

fn format_timestamp(ticks: Ticks, format: TimestampFormat) -> String {
    match format {
        TimestampFormat::Ticks => ticks.to_string(),
        TimestampFormat::Iso8601 => Utc
            .timestamp_millis_opt(ticks)
            .single()
            .map(|dt| dt.to_rfc3339_opts(SecondsFormat::Millis, true))
            .unwrap_or_else(|| ticks.to_string()),
    }
}

/// Parses a labeled event log from CSV.
///
/// Rows are grouped by case in first-appearance order; events within a case
/// are ordered by timestamp with file order breaking ties, then positions are
/// assigned 1..n. Every row of a case must carry the same label.
pub fn parse_log(path: &Path, schema: &CsvSchema) -> Result<EventLog, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn { column: name.to_string() })
    };
    let case_idx = column(&schema.case_column)?;
    let activity_idx = column(&schema.activity_column)?;
    let timestamp_idx = column(&schema.timestamp_column)?;
    let label_idx = column(&schema.label_column)?;

    // Grouped rows per case, preserving file order within each group.
    let mut case_order: Vec<String> = Vec::new();
    let mut rows_by_case: HashMap<String, Vec<(Ticks, usize, String)>> = HashMap::new();
    let mut labels_by_case: HashMap<String, Outcome> = HashMap::new();

    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("").to_string();
        let case_id = field(case_idx);
        let raw_timestamp = field(timestamp_idx);
        let timestamp = parse_timestamp(&raw_timestamp, schema.timestamp_format).ok_or_else(|| {
            IngestError::BadTimestamp { row: row_number + 2, value: raw_timestamp.clone(), case_id: case_id.clone() }
        })?;
        let raw_label = field(label_idx);
        let label = if raw_label == schema.positive_value {
            Outcome::Positive
        } else if raw_label == schema.negative_value {
            Outcome::Negative
        } else {
            return Err(IngestError::BadLabel { row: row_number + 2, value: raw_label, case_id });
        };
        match labels_by_case.get(&case_id) {
            None => {
                labels_by_case.insert(case_id.clone(), label);
                case_order.push(case_id.clone());
            }
            Some(existing) if *existing != label => {
                return Err(IngestError::ConflictingLabels { case_id });
            }
            Some(_) => {}
        }
        let file_order = row_number;
        rows_by_case.entry(case_id).or_default().push((timestamp, file_order, field(activity_idx)));
    }

    if case_order.is_empty() {
        return Err(IngestError::EmptyLog);
    }

    let mut traces = Vec::with_capacity(case_order.len());
    for case_id in case_order {
        let mut rows = rows_by_case.remove(&case_id).expect("grouped rows exist for every case");
        rows.sort_by_key(|(timestamp, file_order, _)| (*timestamp, *file_order));
        let events = rows
            .into_iter()
            .enumerate()
            .map(|(i, (timestamp, _, activity))| Event {
                case_id: case_id.clone(),
                activity,
                timestamp,
                position: i + 1,
            })
            .collect();
        traces.push(Trace { case_id: case_id.clone(), events, label: labels_by_case[&case_id] });
    }
    EventLog::from_traces(traces)
}

/// Writes a log to CSV in canonical form: one row per event, traces in log
/// order, events in position order. `parse_log` on the output reproduces the
/// log exactly.
pub fn write_log(log: &EventLog, path: &Path, schema: &CsvSchema) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        schema.case_column.as_str(),
        schema.activity_column.as_str(),
        schema.timestamp_column.as_str(),
        schema.label_column.as_str(),
    ])?;
    for trace in &log.traces {
        let label = match trace.label {
            Outcome::Positive => &schema.positive_value,
            Outcome::Negative => &schema.negative_value,
        };
        for event in &trace.events {
            writer.write_record([
                event.case_id.as_str(),
                event.activity.as_str(),
                &format_timestamp(event.timestamp, schema.timestamp_format),
                label,
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Errors raised by splitting or prefix extraction.
#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("train fraction must lie in (0, 1), got {fraction}")]
    BadFraction { fraction: f64 },
    #[error("split would leave an empty {side} side")]
    DegenerateSplit { side: &'static str },
    #[error("prefix length bounds invalid: min {min}, max {max}")]
    BadLengths { min: usize, max: usize },
    #[error("no prefixes extracted (all traces shorter than min length {min})")]
    NoPrefixes { min: usize },
}

/// Temporal train/test split.
///
/// Traces are ordered by start time (stable on ties) and the first
/// `floor(fraction * n)` become the training side. Training events whose
/// timestamps fall strictly after the earliest test-trace start are
/// discarded, so no training information postdates the test horizon;
/// training traces emptied entirely by this rule are dropped.
pub fn temporal_split(log: &EventLog, fraction: f64) -> Result<(EventLog, EventLog), SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::BadFraction { fraction });
    }
    let mut ordered: Vec<&Trace> = log.traces.iter().collect();
    ordered.sort_by_key(|t| t.start_time());
    let cut = (fraction * ordered.len() as f64).floor() as usize;
    if cut == 0 {
        return Err(SplitError::DegenerateSplit { side: "train" });
    }
    if cut == ordered.len() {
        return Err(SplitError::DegenerateSplit { side: "test" });
    }
    let (train_slice, test_slice) = ordered.split_at(cut);
    let horizon = test_slice.iter().map(|t| t.start_time()).min().expect("test side is non-empty");

    let mut train_traces = Vec::new();
    for trace in train_slice {
        let kept: Vec<Event> = trace.events.iter().filter(|e| e.timestamp <= horizon).cloned().collect();
        if kept.is_empty() {
            continue;
        }
        let events = kept
            .into_iter()
            .enumerate()
            .map(|(i, mut event)| {
                event.position = i + 1;
                event
            })
            .collect();
        train_traces.push(Trace { case_id: trace.case_id.clone(), events, label: trace.label });
    }
    if train_traces.is_empty() {
        return Err(SplitError::DegenerateSplit { side: "train" });
    }
    let test_traces: Vec<Trace> = test_slice.iter().map(|t| (*t).clone()).collect();

    let train = EventLog::from_traces(train_traces).expect("split preserves trace invariants");
    let test = EventLog::from_traces(test_traces).expect("split preserves trace invariants");
    Ok((train, test))
}

/// Extracts every prefix of length `min_length..=min(trace length, max_length)`
/// from every trace. Prefixes inherit the full-trace label, so all prefixes of
/// one trace stay on the side of whatever split produced the log.
pub fn extract_prefixes(log: &EventLog, min_length: usize, max_length: usize) -> Result<PrefixLog, SplitError> {
    if min_length == 0 || min_length > max_length {
        return Err(SplitError::BadLengths { min: min_length, max: max_length });
    }
    let mut prefixes = Vec::new();
    for trace in &log.traces {
        let upper = trace.len().min(max_length);
        for length in min_length..=upper {
            prefixes.push(Prefix {
                case_id: trace.case_id.clone(),
                activities: trace.events[..length].iter().map(|e| e.activity.clone()).collect(),
                label: trace.label,
            });
        }
    }
    if prefixes.is_empty() {
        return Err(SplitError::NoPrefixes { min: min_length });
    }
    Ok(PrefixLog { prefixes, min_length, max_length })
}

/// Collapses duplicate (activity sequence, label) pairs to their first
/// occurrence. With `remove_ambiguous`, any activity sequence that occurs
/// with both labels is removed entirely: such a prefix is its own adversarial
/// example and poisons both attack evaluation and manifold training.
pub fn deduplicate(prefix_log: &PrefixLog, remove_ambiguous: bool) -> PrefixLog {
    let mut labels_by_sequence: HashMap<&[String], HashSet<Outcome>> = HashMap::new();
    for prefix in &prefix_log.prefixes {
        labels_by_sequence.entry(prefix.activities.as_slice()).or_default().insert(prefix.label);
    }
    let mut seen: HashSet<(Vec<String>, Outcome)> = HashSet::new();
    let mut kept = Vec::new();
    for prefix in &prefix_log.prefixes {
        if remove_ambiguous && labels_by_sequence[prefix.activities.as_slice()].len() > 1 {
            continue;
        }
        if seen.insert((prefix.activities.clone(), prefix.label)) {
            kept.push(prefix.clone());
        }
    }
    PrefixLog { prefixes: kept, min_length: prefix_log.min_length, max_length: prefix_log.max_length }
}

/// Spec for synthetic log generation: class-conditional first-order Markov
/// chains over a shared activity vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_traces: usize,
    /// Vocabulary size; activities are named `a`, `b`, `c`, ...
    pub n_activities: usize,
    /// Trace lengths are drawn uniformly from `min_length..=max_length`.
    pub min_length: usize,
    pub max_length: usize,
    /// Target fraction of positive traces (clamped so both classes appear).
    pub positive_ratio: f64,
    /// Row `i` holds the next-activity distribution after activity `i`; the
    /// last row is the initial-activity distribution. Rows need not be
    /// normalized; they are treated as weights.
    pub transitions_negative: Vec<Vec<f64>>,
    pub transitions_positive: Vec<Vec<f64>>,
}

/// Errors raised by synthetic generation.
#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 2 traces and 1 activity, got {n_traces} traces / {n_activities} activities")]
    TooSmall { n_traces: usize, n_activities: usize },
    #[error("length bounds invalid: min {min}, max {max}")]
    BadLengths { min: usize, max: usize },
    #[error("transition table for the {class} class must be {expected}x{cols}, got {rows} rows")]
    BadTableShape { class: &'static str, expected: usize, cols: usize, rows: usize },
    #[error("transition row {row} of the {class} class has no positive weight")]
    DeadRow { class: &'static str, row: usize },
}

impl SyntheticSpec {
    /// A two-pattern spec: the negative class tends to walk the vocabulary
    /// forward (a, b, c, ...) while the positive class walks it backward.
    /// The opposing transition structure keeps the outcome learnable from
    /// both aggregate counts and order.
    pub fn two_pattern(n_traces: usize, n_activities: usize, min_length: usize, max_length: usize) -> SyntheticSpec {
        let n = n_activities;
        let mut forward = vec![vec![0.05; n]; n + 1];
        let mut backward = vec![vec![0.05; n]; n + 1];
        for i in 0..n {
            forward[i][(i + 1) % n] = 1.0;
            backward[i][(i + n - 1) % n] = 1.0;
        }
        // Initial activity: negatives start early in the vocabulary,
        // positives late.
        for j in 0..n {
            forward[n][j] = if j == 0 { 1.0 } else { 0.05 };
            backward[n][j] = if j == n - 1 { 1.0 } else { 0.05 };
        }
        SyntheticSpec {
            n_traces,
            n_activities,
            min_length,
            max_length,
            positive_ratio: 0.5,
            transitions_negative: forward,
            transitions_positive: backward,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_traces < 2 || self.n_activities == 0 {
            return Err(SynthError::TooSmall { n_traces: self.n_traces, n_activities: self.n_activities });
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(SynthError::BadLengths { min: self.min_length, max: self.max_length });
        }
        for (class, table) in [("negative", &self.transitions_negative), ("positive", &self.transitions_positive)] {
            if table.len() != self.n_activities + 1 || table.iter().any(|row| row.len() != self.n_activities) {
                return Err(SynthError::BadTableShape {
                    class,
                    expected: self.n_activities + 1,
                    cols: self.n_activities,
                    rows: table.len(),
                });
            }
            for (row_index, row) in table.iter().enumerate() {
                if !row.iter().any(|&w| w > 0.0) {
                    return Err(SynthError::DeadRow { class, row: row_index });
                }
            }
        }
        Ok(())
    }
}

/// Activity name for vocabulary index `i`: `a`..`z`, then `a26`, `a27`, ...
pub fn synthetic_activity_name(index: usize) -> String {
    if index < 26 {
        ((b'a' + index as u8) as char).to_string()
    } else {
        format!("a{index}")
    }
}

fn sample_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return i;
        }
        draw -= w;
    }
    weights.len() - 1
}

/// Generates a labeled synthetic log. Trace starts are spaced one minute
/// apart in generation order and events one second apart, so the log has a
/// well-defined temporal structure; labels are shuffled across the timeline.
/// Identical spec and seed yield an identical log.
pub fn generate_synthetic_log(spec: &SyntheticSpec, seed: u64) -> Result<EventLog, SynthError> {
    spec.validate()?;
    let mut warnings = Vec::new();
    if spec.transitions_negative == spec.transitions_positive {
        warnings.push("class-conditional transition tables are identical; outcome is unlearnable".to_string());
    }

    let n = spec.n_traces;
    let positives = ((spec.positive_ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut labels = vec![Outcome::Positive; positives];
    labels.extend(std::iter::repeat(Outcome::Negative).take(n - positives));
    let mut label_rng = seeding::stream_rng(seed, "synth/labels");
    labels.shuffle(&mut label_rng);

    let mut trace_rng = seeding::stream_rng(seed, "synth/traces");
    let base_time: Ticks = 1_700_000_000_000; // fixed epoch anchor
    let mut traces = Vec::with_capacity(n);
    for (i, label) in labels.into_iter().enumerate() {
        let table = match label {
            Outcome::Negative => &spec.transitions_negative,
            Outcome::Positive => &spec.transitions_positive,
        };
        let length = trace_rng.gen_range(spec.min_length..=spec.max_length);
        let start = base_time + (i as Ticks) * 60_000;
        let case_id = format!("case-{i:04}");
        let mut current = sample_weighted(&table[spec.n_activities], &mut trace_rng);
        let mut events = Vec::with_capacity(length);
        for j in 0..length {
            events.push(Event {
                case_id: case_id.clone(),
                activity: synthetic_activity_name(current),
                timestamp: start + (j as Ticks) * 1_000,
                position: j + 1,
            });
            if j + 1 < length {
                current = sample_weighted(&table[current], &mut trace_rng);
            }
        }
        traces.push(Trace { case_id, events, label });
    }

    // Use the spec's canonical vocabulary order (a, b, c, ...) rather than
    // first-occurrence order so the encoding is stable across seeds.
    let vocabulary: Vec<String> = (0..spec.n_activities).map(synthetic_activity_name).collect();
    let mut log = EventLog { traces, vocabulary, warnings };
    let seen = first_occurrence_vocabulary(&log.traces);
    if seen.len() < spec.n_activities {
        log.warnings.push(format!(
            "only {} of {} activities were generated; unused activities stay in the vocabulary",
            seen.len(),
            spec.n_activities
        ));
    }
    Ok(log)
}

/// Per-length counts, useful for report sanity checks.
pub fn length_histogram(log: &EventLog) -> BTreeMap<usize, usize> {
    let mut histogram = BTreeMap::new();
    for trace in &log.traces {
        *histogram.entry(trace.len()).or_insert(0) += 1;
    }
    histogram
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::NamedTempFile;

    fn event(case: &str, activity: &str, ts: Ticks, pos: usize) -> Event {
        Event { case_id: case.into(), activity: activity.into(), timestamp: ts, position: pos }
    }

    fn trace(case: &str, activities: &[&str], start: Ticks, label: Outcome) -> Trace {
        let events = activities
            .iter()
            .enumerate()
            .map(|(i, a)| event(case, a, start + i as Ticks * 1000, i + 1))
            .collect();
        Trace { case_id: case.into(), events, label }
    }

    fn write_csv(content: &str) -> NamedTempFile {
        let mut file = NamedTempFile::new().expect("temp file");
        file.write_all(content.as_bytes()).expect("write");
        file
    }

    #[test]
    fn parses_unordered_rows_and_assigns_positions() {
        let file = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,review,2024-01-01T10:02:00Z,1\n\
             c1,register,2024-01-01T10:00:00Z,1\n\
             c2,register,2024-01-01T11:00:00Z,0\n\
             c1,decide,2024-01-01T10:05:00Z,1\n",
        );
        let log = parse_log(file.path(), &CsvSchema::default()).expect("parse");
        assert_eq!(log.len(), 2);
        let c1 = &log.traces[0];
        assert_eq!(c1.case_id, "c1");
        assert_eq!(c1.activities(), vec!["register", "review", "decide"]);
        assert_eq!(c1.events.iter().map(|e| e.position).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(c1.label, Outcome::Positive);
        assert_eq!(log.traces[1].label, Outcome::Negative);
        // Vocabulary in first-occurrence order after per-case time ordering.
        assert_eq!(log.vocabulary, vec!["register", "review", "decide"]);
    }

    #[test]
    fn shuffled_rows_of_one_case_parse_to_the_same_log() {
        let sorted = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,x,2024-01-01T09:00:00Z,0\n\
             c1,y,2024-01-01T09:01:00Z,0\n\
             c1,z,2024-01-01T09:02:00Z,0\n\
             c2,x,2024-01-01T10:00:00Z,1\n",
        );
        let shuffled = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,z,2024-01-01T09:02:00Z,0\n\
             c1,x,2024-01-01T09:00:00Z,0\n\
             c1,y,2024-01-01T09:01:00Z,0\n\
             c2,x,2024-01-01T10:00:00Z,1\n",
        );
        let a = parse_log(sorted.path(), &CsvSchema::default()).expect("parse sorted");
        let b = parse_log(shuffled.path(), &CsvSchema::default()).expect("parse shuffled");
        assert_eq!(a, b);
    }

    #[test]
    fn timestamp_ties_keep_file_order() {
        let file = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,first,2024-01-01T09:00:00Z,0\n\
             c1,second,2024-01-01T09:00:00Z,0\n",
        );
        let log = parse_log(file.path(), &CsvSchema::default()).expect("parse");
        assert_eq!(log.traces[0].activities(), vec!["first", "second"]);
    }

    #[test]
    fn conflicting_labels_are_rejected() {
        let file = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,x,2024-01-01T09:00:00Z,0\n\
             c1,y,2024-01-01T09:01:00Z,1\n",
        );
        let err = parse_log(file.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, IngestError::ConflictingLabels { .. }));
    }

    #[test]
    fn missing_column_and_bad_values_are_reported() {
        let file = write_csv("case_id,activity,when,label\nc1,x,2024-01-01T09:00:00Z,0\n");
        let err = parse_log(file.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { ref column } if column == "timestamp"));

        let file = write_csv("case_id,activity,timestamp,label\nc1,x,not-a-time,0\n");
        let err = parse_log(file.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, IngestError::BadTimestamp { row: 2, .. }));

        let file = write_csv("case_id,activity,timestamp,label\nc1,x,2024-01-01T09:00:00Z,maybe\n");
        let err = parse_log(file.path(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, IngestError::BadLabel { .. }));
    }

    #[test]
    fn round_trip_through_canonical_csv_is_identity() {
        let file = write_csv(
            "case_id,activity,timestamp,label\n\
             c1,review,2024-01-01T10:02:00.250Z,1\n\
             c1,register,2024-01-01T10:00:00Z,1\n\
             c2,decide,2024-01-01T11:00:00Z,0\n",
        );
        let schema = CsvSchema::default();
        let log = parse_log(file.path(), &schema).expect("parse");
        let out = NamedTempFile::new().expect("temp");
        write_log(&log, out.path(), &schema).expect("write");
        let reparsed = parse_log(out.path(), &schema).expect("reparse");
        assert_eq!(log, reparsed);
    }

    #[test]
    fn ticks_format_round_trips() {
        let schema = CsvSchema { timestamp_format: TimestampFormat::Ticks, ..CsvSchema::default() };
        let file = write_csv("case_id,activity,timestamp,label\nc1,x,5,0\nc1,y,9,0\n");
        let log = parse_log(file.path(), &schema).expect("parse");
        assert_eq!(log.traces[0].events[1].timestamp, 9);
        let out = NamedTempFile::new().expect("temp");
        write_log(&log, out.path(), &schema).expect("write");
        assert_eq!(log, parse_log(out.path(), &schema).expect("reparse"));
    }

    #[test]
    fn temporal_split_keeps_whole_traces_and_discards_late_train_events() {
        // Five traces starting at t = 0, 10, 20, 30, 40 (seconds scale).
        // Trace at t=10 runs long past the test horizon (t=30 start? no:
        // with fraction 0.6 the first three traces train, horizon = start of
        // the fourth trace at t=30_000).
        let traces = vec![
            trace("t0", &["a", "b"], 0, Outcome::Negative),
            {
                let mut t = trace("t1", &["a", "b", "c"], 10_000, Outcome::Positive);
                t.events[2].timestamp = 99_000; // runs past the horizon
                t
            },
            trace("t2", &["b"], 20_000, Outcome::Negative),
            trace("t3", &["a", "c"], 30_000, Outcome::Positive),
            trace("t4", &["c"], 40_000, Outcome::Negative),
        ];
        let log = EventLog::from_traces(traces).expect("log");
        let (train, test) = temporal_split(&log, 0.6).expect("split");
        assert_eq!(train.len(), 3);
        assert_eq!(test.len(), 2);
        // Whole traces stay on one side.
        let train_cases: Vec<_> = train.traces.iter().map(|t| t.case_id.as_str()).collect();
        assert_eq!(train_cases, vec!["t0", "t1", "t2"]);
        // The event at t=99_000 (after horizon 30_000) was discarded and
        // positions remain consecutive.
        let t1 = &train.traces[1];
        assert_eq!(t1.activities(), vec!["a", "b"]);
        assert_eq!(t1.events.iter().map(|e| e.position).collect::<Vec<_>>(), vec![1, 2]);
        // Test traces are untouched.
        assert_eq!(test.traces[0].activities(), vec!["a", "c"]);
    }

    #[test]
    fn temporal_split_rejects_degenerate_fractions() {
        let log = EventLog::from_traces(vec![
            trace("t0", &["a"], 0, Outcome::Negative),
            trace("t1", &["b"], 1000, Outcome::Positive),
        ])
        .expect("log");
        assert!(matches!(temporal_split(&log, 0.0), Err(SplitError::BadFraction { .. })));
        assert!(matches!(temporal_split(&log, 1.0), Err(SplitError::BadFraction { .. })));
        assert!(matches!(temporal_split(&log, 0.4), Err(SplitError::DegenerateSplit { .. })));
    }

    #[test]
    fn prefixes_cover_all_lengths_within_bounds() {
        let log = EventLog::from_traces(vec![
            trace("t0", &["a", "b", "c", "d"], 0, Outcome::Negative),
            trace("t1", &["a"], 1000, Outcome::Positive),
        ])
        .expect("log");
        let prefix_log = extract_prefixes(&log, 2, 3).expect("prefixes");
        // t0 contributes lengths 2 and 3; t1 is too short.
        assert_eq!(prefix_log.len(), 2);
        assert_eq!(prefix_log.prefixes[0].activities, vec!["a", "b"]);
        assert_eq!(prefix_log.prefixes[1].activities, vec!["a", "b", "c"]);
        assert!(extract_prefixes(&log, 5, 9).is_err());
        assert!(extract_prefixes(&log, 0, 3).is_err());
        assert!(extract_prefixes(&log, 3, 2).is_err());
    }

    #[test]
    fn deduplicate_collapses_and_optionally_removes_ambiguous() {
        let prefix = |case: &str, acts: &[&str], label| Prefix {
            case_id: case.into(),
            activities: acts.iter().map(|s| s.to_string()).collect(),
            label,
        };
        let log = PrefixLog {
            prefixes: vec![
                prefix("c1", &["a", "b"], Outcome::Negative),
                prefix("c2", &["a", "b"], Outcome::Negative), // exact duplicate
                prefix("c3", &["a", "b"], Outcome::Positive), // ambiguous twin
                prefix("c4", &["a", "c"], Outcome::Positive),
            ],
            min_length: 2,
            max_length: 2,
        };
        let collapsed = deduplicate(&log, false);
        // One representative per (sequence, label) pair, first occurrence wins.
        assert_eq!(collapsed.len(), 3);
        assert_eq!(collapsed.prefixes[0].case_id, "c1");

        let strict = deduplicate(&log, true);
        assert_eq!(strict.len(), 1);
        assert_eq!(strict.prefixes[0].case_id, "c4");
    }

    #[test]
    fn synthetic_log_is_reproducible_and_balanced() {
        let spec = SyntheticSpec::two_pattern(50, 5, 2, 8);
        let a = generate_synthetic_log(&spec, 11).expect("generate");
        let b = generate_synthetic_log(&spec, 11).expect("generate again");
        assert_eq!(a, b);
        let c = generate_synthetic_log(&spec, 12).expect("other seed");
        assert_ne!(a, c);
        assert!(a.positive_class_ratio() > 0.3 && a.positive_class_ratio() < 0.7);
        assert!(a.traces.iter().all(|t| t.len() >= 2 && t.len() <= 8));
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn identical_transition_tables_trigger_a_warning() {
        let mut spec = SyntheticSpec::two_pattern(10, 3, 2, 4);
        spec.transitions_positive = spec.transitions_negative.clone();
        let log = generate_synthetic_log(&spec, 3).expect("generate");
        assert!(log.warnings.iter().any(|w| w.contains("identical")));
    }

    #[test]
    fn synthetic_negative_traces_walk_forward() {
        let spec = SyntheticSpec::two_pattern(40, 4, 3, 6);
        let log = generate_synthetic_log(&spec, 5).expect("generate");
        // With dominant weight, most negative transitions step forward
        // (a->b->c->d->a) and most positive ones step backward.
        let mut forward = 0usize;
        let mut total = 0usize;
        for trace in log.traces.iter().filter(|t| t.label == Outcome::Negative) {
            for pair in trace.events.windows(2) {
                let from = pair[0].activity.as_bytes()[0] - b'a';
                let to = pair[1].activity.as_bytes()[0] - b'a';
                if (from + 1) % 4 == to {
                    forward += 1;
                }
                total += 1;
            }
        }
        assert!(forward as f64 > 0.7 * total as f64, "forward {forward}/{total}");
    }
}
