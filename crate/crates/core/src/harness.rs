//! Pipeline orchestration: run configuration, staged execution with
//! persisted artifacts, and report emission.
//!
//! A run is described by a TOML [`RunConfig`] and materializes under one
//! output directory as a fixed set of files. Stages run in order — ingest,
//! split, train, attack, evaluate, profile, report — and each persists its
//! outputs before the next starts, so a run can be resumed or partially
//! re-executed from the artifacts alone. All randomness derives from the
//! single run seed through named streams; re-running a configuration
//! reproduces every result and report table byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    build_position_activity_table, generate_adversarials, AttackConfig, AttackError, AttackStatus,
    AttackStrategy,
};
use crate::classifiers::{
    encode_dataset, evaluate_auc, select_threshold, train_classifier, Classifier, ClassifierKind,
    DecisionThreshold, Hyperparams, PredictionError, TrainingError,
};
use crate::encoding::{aggregate_encode_activities, ActivityVocabulary, EncodingError};
use crate::eventlog::{
    deduplicate, extract_prefixes, generate_synthetic_log, parse_log, temporal_split, write_log,
    CsvSchema, EventLog, IngestError, Outcome, Prefix, PrefixLog, SplitError, SynthError,
    SyntheticSpec,
};
use crate::manifold::{train_class_vae, ClassManifold, ManifoldError, VaeConfig};
use crate::metrics::{self, MetricPanel, MetricsError};
use crate::profiling::{
    normalize_metrics, profile_population, ClusterProfile, NormalizedAttackMetrics,
    ProfilingError, QuartileThresholds,
};
use crate::seeding;
use crate::attacks::ManifoldPair;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "ADVPPM_OUT";

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Top-level run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Label recorded in the manifest.
    pub name: String,
    /// Root seed; every stochastic stage draws from a named stream of it.
    pub seed: u64,
    /// Where artifacts go, unless overridden on the command line or via
    /// [`OUTPUT_DIR_ENV`].
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { name: "run".into(), seed: 7, output_dir: PathBuf::from("out") }
    }
}

/// Where the event log comes from: a CSV file or a synthetic generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    /// CSV event log to ingest; mutually exclusive with `synthetic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Column names and label values of the source file.
    pub schema: CsvSchema,
    /// Synthetic two-pattern log spec; mutually exclusive with `source`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

/// Parameters of the built-in synthetic generator: one class walks the
/// activity alphabet forward, the other backward, so the outcome is
/// learnable from both activity counts and order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_traces: usize,
    pub n_activities: usize,
    /// Trace lengths are drawn uniformly from `min_length..=max_length`.
    pub min_length: usize,
    pub max_length: usize,
    pub positive_ratio: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_traces: 200,
            n_activities: 5,
            min_length: 4,
            max_length: 10,
            positive_ratio: 0.5,
        }
    }
}

impl SyntheticSection {
    fn to_spec(&self) -> SyntheticSpec {
        let mut spec = SyntheticSpec::two_pattern(
            self.n_traces,
            self.n_activities,
            self.min_length,
            self.max_length,
        );
        spec.positive_ratio = self.positive_ratio;
        spec
    }
}

/// Temporal split parameters, used both for train/test and for carving a
/// validation slice out of the training side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { fraction: 0.8 }
    }
}

/// Prefix extraction and deduplication policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefixSection {
    pub min_length: usize,
    /// Longest prefix kept; also the sequence length every model is sized to.
    pub max_length: usize,
    /// Collapse duplicate (sequence, label) pairs.
    pub dedup: bool,
    /// Drop sequences that occur with both labels; such a prefix is its own
    /// adversarial example and poisons evaluation.
    pub remove_ambiguous: bool,
}

impl Default for PrefixSection {
    fn default() -> Self {
        PrefixSection { min_length: 2, max_length: 10, dedup: true, remove_ambiguous: true }
    }
}

/// Manifold hyperparameters exposed in the configuration; sequence length
/// and seed are filled in by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSettings {
    pub latent_dim: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub batch_size: usize,
}

impl Default for VaeSettings {
    fn default() -> Self {
        let base = VaeConfig::default();
        VaeSettings {
            latent_dim: base.latent_dim,
            hidden_size: base.hidden_size,
            epochs: base.epochs,
            learning_rate: base.learning_rate,
            kl_weight: base.kl_weight,
            batch_size: base.batch_size,
        }
    }
}

impl VaeSettings {
    fn to_config(&self, max_length: usize, seed: u64) -> VaeConfig {
        VaeConfig {
            latent_dim: self.latent_dim,
            hidden_size: self.hidden_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            kl_weight: self.kl_weight,
            batch_size: self.batch_size,
            max_length,
            seed,
        }
    }

    fn check(&self, section: &str) -> Result<(), HarnessError> {
        let fail = |what: &str| HarnessError::Config { reason: format!("[{section}] {what}") };
        if self.latent_dim == 0 {
            return Err(fail("latent_dim must be positive"));
        }
        if self.hidden_size == 0 {
            return Err(fail("hidden_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(fail("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(fail("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(fail("learning_rate must be positive"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(fail("kl_weight must be nonnegative"));
        }
        Ok(())
    }
}

/// One manifold configuration per outcome class.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeSection {
    pub negative: VaeSettings,
    pub positive: VaeSettings,
}

impl VaeSection {
    fn for_label(&self, label: Outcome) -> &VaeSettings {
        match label {
            Outcome::Negative => &self.negative,
            Outcome::Positive => &self.positive,
        }
    }
}

/// The complete description of one run. Parses from TOML; the section
/// names are `[run]`, `[log]`, `[split]`, `[prefix]`, `[classifier]`,
/// `[vae.negative]` / `[vae.positive]` and repeated `[[attack]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub log: LogSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub prefix: PrefixSection,
    /// Classifier family and hyperparameters, tagged by `kind`.
    pub classifier: Hyperparams,
    #[serde(default)]
    pub vae: VaeSection,
    /// Attack methods to run, in order. Per-attack seeds are derived from
    /// the run seed; a `seed` key in these tables is ignored.
    #[serde(default, rename = "attack")]
    pub attacks: Vec<AttackConfig>,
}

impl RunConfig {
    /// Parses a configuration from TOML text.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, HarnessError> {
        toml::from_str(text)
            .map_err(|e| HarnessError::Config { reason: format!("cannot parse configuration: {e}") })
    }

    /// Reads and parses a configuration file.
    pub fn from_path(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    /// Canonical TOML serialization, the basis of the configuration hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("a run configuration always serializes")
    }

    /// Hash of the canonical serialization, as stored in the manifest.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", seeding::fnv1a64(self.canonical_toml().as_bytes()))
    }

    /// Validates the whole configuration up front, before any stage runs.
    /// Cross-cutting requirements (a differentiable classifier for
    /// gradient-based attacks, existing input paths, sane fractions) fail
    /// here rather than deep inside a stage.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail =
            |reason: String| -> Result<(), HarnessError> { Err(HarnessError::Config { reason }) };
        match (&self.log.source, &self.log.synthetic) {
            (None, None) => {
                return fail("the [log] section needs either `source` or a [log.synthetic] table".into())
            }
            (Some(_), Some(_)) => {
                return fail("`log.source` and [log.synthetic] are mutually exclusive".into())
            }
            (Some(path), None) => {
                if !path.exists() {
                    return fail(format!("log source {} does not exist", path.display()));
                }
            }
            (None, Some(synthetic)) => {
                if !(synthetic.positive_ratio > 0.0 && synthetic.positive_ratio < 1.0) {
                    return fail(format!(
                        "synthetic positive_ratio must lie in (0, 1), got {}",
                        synthetic.positive_ratio
                    ));
                }
            }
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return fail(format!("split fraction must lie in (0, 1), got {}", self.split.fraction));
        }
        if self.prefix.min_length == 0 || self.prefix.min_length > self.prefix.max_length {
            return fail(format!(
                "prefix length bounds invalid: min {}, max {}",
                self.prefix.min_length, self.prefix.max_length
            ));
        }
        self.vae.negative.check("vae.negative")?;
        self.vae.positive.check("vae.positive")?;
        if self.attacks.is_empty() {
            return fail("at least one [[attack]] section is required".into());
        }
        for (index, attack) in self.attacks.iter().enumerate() {
            attack
                .validate()
                .map_err(|e| HarnessError::Config { reason: format!("[[attack]] {index}: {e}") })?;
            if attack.strategy == AttackStrategy::GradientBased
                && self.classifier.kind() != ClassifierKind::Recurrent
            {
                return fail(format!(
                    "[[attack]] {index}: gradient_based attacks need the recurrent classifier; \
                     a {} model is not inherently differentiable",
                    self.classifier.kind().name()
                ));
            }
        }
        Ok(())
    }
}

/// Effective output directory: an explicit override wins, then the
/// environment override, then the configured directory.
pub fn resolve_output_dir(
    config: &RunConfig,
    cli_override: Option<&Path>,
    env_override: Option<&str>,
) -> PathBuf {
    if let Some(dir) = cli_override {
        return dir.to_path_buf();
    }
    if let Some(dir) = env_override {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    config.run.output_dir.clone()
}

// ---------------------------------------------------------------------------
// artifact layout
// ---------------------------------------------------------------------------

const MANIFEST_FILE: &str = "manifest.json";
const LOG_FILE: &str = "log.csv";
const VOCAB_FILE: &str = "vocab.json";
const PREFIXES_TRAIN_FILE: &str = "prefixes_train.json";
const PREFIXES_FIT_FILE: &str = "prefixes_fit.json";
const PREFIXES_VALIDATION_FILE: &str = "prefixes_validation.json";
const PREFIXES_TEST_FILE: &str = "prefixes_test.json";
const CLASSIFIER_FILE: &str = "classifier.json";
const MANIFOLD_NEGATIVE_FILE: &str = "manifold_negative.json";
const MANIFOLD_POSITIVE_FILE: &str = "manifold_positive.json";
const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
const ATTACKS_FILE: &str = "attacks.csv";
const RESULTS_FILE: &str = "results.csv";
const PROFILES_FILE: &str = "profiles.csv";
const PROFILE_THRESHOLDS_FILE: &str = "profile_thresholds.json";
const REPORT_SUMMARY_FILE: &str = "report_summary.csv";
const REPORT_BY_LENGTH_FILE: &str = "report_success_by_length.csv";
const REPORT_PROFILES_FILE: &str = "report_profiles.csv";

/// Locations of every artifact of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> RunPaths {
        RunPaths { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.file(MANIFEST_FILE)
    }

    pub fn log_csv(&self) -> PathBuf {
        self.file(LOG_FILE)
    }

    pub fn vocab(&self) -> PathBuf {
        self.file(VOCAB_FILE)
    }

    pub fn prefixes_train(&self) -> PathBuf {
        self.file(PREFIXES_TRAIN_FILE)
    }

    pub fn prefixes_fit(&self) -> PathBuf {
        self.file(PREFIXES_FIT_FILE)
    }

    pub fn prefixes_validation(&self) -> PathBuf {
        self.file(PREFIXES_VALIDATION_FILE)
    }

    pub fn prefixes_test(&self) -> PathBuf {
        self.file(PREFIXES_TEST_FILE)
    }

    pub fn classifier(&self) -> PathBuf {
        self.file(CLASSIFIER_FILE)
    }

    pub fn manifold(&self, label: Outcome) -> PathBuf {
        match label {
            Outcome::Negative => self.file(MANIFOLD_NEGATIVE_FILE),
            Outcome::Positive => self.file(MANIFOLD_POSITIVE_FILE),
        }
    }

    pub fn train_summary(&self) -> PathBuf {
        self.file(TRAIN_SUMMARY_FILE)
    }

    pub fn attacks_csv(&self) -> PathBuf {
        self.file(ATTACKS_FILE)
    }

    pub fn results_csv(&self) -> PathBuf {
        self.file(RESULTS_FILE)
    }

    pub fn profiles_csv(&self) -> PathBuf {
        self.file(PROFILES_FILE)
    }

    pub fn profile_thresholds(&self) -> PathBuf {
        self.file(PROFILE_THRESHOLDS_FILE)
    }

    pub fn report_summary(&self) -> PathBuf {
        self.file(REPORT_SUMMARY_FILE)
    }

    pub fn report_success_by_length(&self) -> PathBuf {
        self.file(REPORT_BY_LENGTH_FILE)
    }

    pub fn report_profiles(&self) -> PathBuf {
        self.file(REPORT_PROFILES_FILE)
    }
}

/// Schema used for the canonical `log.csv` artifact, regardless of how the
/// source file was laid out.
fn artifact_schema() -> CsvSchema {
    CsvSchema::default()
}

// ---------------------------------------------------------------------------
// stages and errors
// ---------------------------------------------------------------------------

/// The pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Split,
    Train,
    Attack,
    Evaluate,
    Profile,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Split,
        Stage::Train,
        Stage::Attack,
        Stage::Evaluate,
        Stage::Profile,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
            Stage::Profile => "profile",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors raised by configuration handling, artifact IO or any stage.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {reason}")]
    Config { reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },
    #[error("missing artifact {}; run the `{stage}` stage first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error(
        "the output directory holds artifacts of a different configuration \
         (manifest hash {found}, expected {expected}); use a fresh directory"
    )]
    ManifestMismatch { expected: String, found: String },
    #[error("no attack results to report")]
    EmptyResults,
    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: &'static str, cause: Box<HarnessError> },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Profiling(#[from] ProfilingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source }
}

fn csv_error(path: &Path, error: csv::Error) -> HarnessError {
    let text = error.to_string();
    match error.into_kind() {
        csv::ErrorKind::Io(source) => io_error(path, source),
        _ => HarnessError::Parse { path: path.to_path_buf(), reason: text },
    }
}

fn require(path: &Path, producer: Stage) -> Result<(), HarnessError> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingArtifact { path: path.to_path_buf(), stage: producer.name() })
    }
}

fn load_json<T: DeserializeOwned>(path: &Path, producer: Stage) -> Result<T, HarnessError> {
    require(path, producer)?;
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| HarnessError::Parse { path: path.to_path_buf(), reason: e.to_string() })
}

fn save_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), HarnessError> {
    let text = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .map_err(|e| HarnessError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    fs::write(path, text).map_err(|e| io_error(path, e))
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// Completion record of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// RFC 3339 completion time.
    pub completed_at: String,
    /// File names (relative to the run directory) the stage wrote.
    pub artifacts: Vec<String>,
}

/// What happened in a run directory: which configuration, which stages, and
/// where their outputs live. Together with the configuration file the
/// manifest fully reconstructs the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub run_name: String,
    /// Hash of the canonical configuration serialization; stages refuse to
    /// mix artifacts produced under a different configuration.
    pub config_hash: String,
    /// Stage records keyed by stage name.
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new(config: &RunConfig) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            run_name: config.run.name.clone(),
            config_hash: config.hash_hex(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest of a run directory, if one exists.
    pub fn load(paths: &RunPaths) -> Result<Option<RunManifest>, HarnessError> {
        let path = paths.manifest();
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
        let manifest = serde_json::from_slice(&bytes)
            .map_err(|e| HarnessError::Parse { path: path.clone(), reason: e.to_string() })?;
        Ok(Some(manifest))
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.stages.contains_key(stage.name())
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

// ---------------------------------------------------------------------------
// result table
// ---------------------------------------------------------------------------

/// Distance panel of one generated adversarial, as stored in `results.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelColumns {
    pub l1: f64,
    pub l2: f64,
    pub emd: f64,
    pub dl_edit: usize,
    pub lcp: usize,
    pub adv_length: usize,
}

/// Profile assignment of one generated adversarial, as stored in
/// `profiles.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileColumns {
    pub dl_norm: f64,
    pub emd_norm: f64,
    pub profile: ClusterProfile,
}

/// One row of the result table. The attack stage fills the base columns,
/// the evaluate stage adds the distance panel and the profile stage adds
/// the cluster assignment; rows whose attack produced no candidate keep the
/// later column groups empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub attack: String,
    pub strategy: String,
    pub case_id: String,
    pub prefix_length: usize,
    /// Ground-truth outcome of the attacked prefix. Only correctly
    /// predicted prefixes are attacked, so this equals the prediction at
    /// `original_prob`.
    pub label: Outcome,
    pub original: Vec<String>,
    pub adversarial: Vec<String>,
    pub original_prob: f64,
    pub adversarial_prob: Option<f64>,
    pub flipped: bool,
    pub latent_distance: Option<f64>,
    pub candidate_count: usize,
    pub status: AttackStatus,
    pub panel: Option<PanelColumns>,
    pub profile_cells: Option<ProfileColumns>,
}

impl ResultRow {
    fn from_adversarial(result: crate::attacks::AdversarialResult) -> ResultRow {
        ResultRow {
            attack: result.attack_name,
            strategy: result.strategy_name,
            case_id: result.original.case_id,
            prefix_length: result.original.activities.len(),
            label: result.original.label,
            original: result.original.activities,
            adversarial: result.adversarial,
            original_prob: result.original_prob,
            adversarial_prob: result.adversarial_prob,
            flipped: result.flipped,
            latent_distance: result.latent_distance,
            candidate_count: result.candidate_count,
            status: result.status,
            panel: None,
            profile_cells: None,
        }
    }
}

/// Which column groups a result CSV carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLevel {
    /// Base columns only (`attacks.csv`).
    Attacks,
    /// Base columns plus the distance panel (`results.csv`).
    Results,
    /// Everything including profiles (`profiles.csv`).
    Profiles,
}

const BASE_COLUMNS: [&str; 13] = [
    "attack",
    "strategy",
    "case_id",
    "prefix_length",
    "label",
    "original",
    "adversarial",
    "original_prob",
    "adversarial_prob",
    "flipped",
    "latent_distance",
    "candidate_count",
    "status",
];
const PANEL_COLUMNS: [&str; 6] = ["l1", "l2", "emd", "dl_edit", "lcp", "adv_length"];
const PROFILE_COLUMNS: [&str; 3] = ["dl_norm", "emd_norm", "profile"];

impl TableLevel {
    fn has_panel(self) -> bool {
        !matches!(self, TableLevel::Attacks)
    }

    fn has_profile(self) -> bool {
        matches!(self, TableLevel::Profiles)
    }

    fn producer(self) -> Stage {
        match self {
            TableLevel::Attacks => Stage::Attack,
            TableLevel::Results => Stage::Evaluate,
            TableLevel::Profiles => Stage::Profile,
        }
    }

    /// Header of a result CSV at this level.
    pub fn columns(self) -> Vec<&'static str> {
        let mut columns: Vec<&'static str> = BASE_COLUMNS.to_vec();
        if self.has_panel() {
            columns.extend(PANEL_COLUMNS);
        }
        if self.has_profile() {
            columns.extend(PROFILE_COLUMNS);
        }
        columns
    }
}

fn outcome_name(label: Outcome) -> &'static str {
    match label {
        Outcome::Negative => "negative",
        Outcome::Positive => "positive",
    }
}

fn parse_outcome(text: &str) -> Option<Outcome> {
    match text {
        "negative" => Some(Outcome::Negative),
        "positive" => Some(Outcome::Positive),
        _ => None,
    }
}

fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt_f64).unwrap_or_default()
}

/// Activity sequences are stored as JSON arrays inside their CSV cell, so
/// arbitrary activity names (including separators) round-trip.
fn sequence_cell(activities: &[String]) -> String {
    serde_json::to_string(activities).expect("strings serialize")
}

/// Writes a result table. Cell formatting is deterministic, so identical
/// rows always produce identical bytes.
pub fn write_result_rows(
    path: &Path,
    rows: &[ResultRow],
    level: TableLevel,
) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(level.columns()).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut record: Vec<String> = vec![
            row.attack.clone(),
            row.strategy.clone(),
            row.case_id.clone(),
            row.prefix_length.to_string(),
            outcome_name(row.label).to_string(),
            sequence_cell(&row.original),
            sequence_cell(&row.adversarial),
            fmt_f64(row.original_prob),
            fmt_opt(row.adversarial_prob),
            row.flipped.to_string(),
            fmt_opt(row.latent_distance),
            row.candidate_count.to_string(),
            row.status.to_string(),
        ];
        if level.has_panel() {
            match &row.panel {
                Some(panel) => record.extend([
                    fmt_f64(panel.l1),
                    fmt_f64(panel.l2),
                    fmt_f64(panel.emd),
                    panel.dl_edit.to_string(),
                    panel.lcp.to_string(),
                    panel.adv_length.to_string(),
                ]),
                None => record.extend(std::iter::repeat(String::new()).take(PANEL_COLUMNS.len())),
            }
        }
        if level.has_profile() {
            match &row.profile_cells {
                Some(cells) => record.extend([
                    fmt_f64(cells.dl_norm),
                    fmt_f64(cells.emd_norm),
                    cells.profile.name().to_string(),
                ]),
                None => {
                    record.extend(std::iter::repeat(String::new()).take(PROFILE_COLUMNS.len()))
                }
            }
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))?;
    Ok(())
}

/// Cursor over one CSV record with positional, type-checked access.
struct Cells<'a> {
    record: &'a csv::StringRecord,
    index: usize,
    path: &'a Path,
}

impl<'a> Cells<'a> {
    fn new(record: &'a csv::StringRecord, path: &'a Path) -> Cells<'a> {
        Cells { record, index: 0, path }
    }

    fn error(&self, reason: String) -> HarnessError {
        let line = self.record.position().map(|p| p.line()).unwrap_or(0);
        HarnessError::Parse { path: self.path.to_path_buf(), reason: format!("line {line}: {reason}") }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, HarnessError> {
        let cell = self
            .record
            .get(self.index)
            .ok_or_else(|| self.error(format!("missing `{what}` column")))?;
        self.index += 1;
        Ok(cell)
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, HarnessError>
    where
        T::Err: fmt::Display,
    {
        let cell = self.next(what)?;
        cell.parse().map_err(|e| self.error(format!("bad `{what}` value {cell:?}: {e}")))
    }

    fn opt_f64(&mut self, what: &str) -> Result<Option<f64>, HarnessError> {
        let cell = self.next(what)?;
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse()
            .map(Some)
            .map_err(|e| self.error(format!("bad `{what}` value {cell:?}: {e}")))
    }

    fn sequence(&mut self, what: &str) -> Result<Vec<String>, HarnessError> {
        let cell = self.next(what)?;
        serde_json::from_str(cell)
            .map_err(|e| self.error(format!("bad `{what}` value {cell:?}: {e}")))
    }
}

/// Reads a result table previously written at the same level.
pub fn read_result_rows(path: &Path, level: TableLevel) -> Result<Vec<ResultRow>, HarnessError> {
    require(path, level.producer())?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    let expected = level.columns();
    if header.iter().ne(expected.iter().copied()) {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            reason: format!("unexpected columns {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut cells = Cells::new(&record, path);
        let attack = cells.next("attack")?.to_string();
        let strategy = cells.next("strategy")?.to_string();
        let case_id = cells.next("case_id")?.to_string();
        let prefix_length: usize = cells.parse("prefix_length")?;
        let label_cell = cells.next("label")?;
        let label = parse_outcome(label_cell)
            .ok_or_else(|| cells.error(format!("bad `label` value {label_cell:?}")))?;
        let original = cells.sequence("original")?;
        let adversarial = cells.sequence("adversarial")?;
        let original_prob: f64 = cells.parse("original_prob")?;
        let adversarial_prob = cells.opt_f64("adversarial_prob")?;
        let flipped: bool = cells.parse("flipped")?;
        let latent_distance = cells.opt_f64("latent_distance")?;
        let candidate_count: usize = cells.parse("candidate_count")?;
        let status_cell = cells.next("status")?;
        let status = AttackStatus::parse(status_cell)
            .ok_or_else(|| cells.error(format!("bad `status` value {status_cell:?}")))?;
        let panel = if level.has_panel() {
            let l1 = cells.opt_f64("l1")?;
            let l2 = cells.opt_f64("l2")?;
            let emd = cells.opt_f64("emd")?;
            let dl_edit = cells.next("dl_edit")?.to_string();
            let lcp_cell = cells.next("lcp")?.to_string();
            let adv_length = cells.next("adv_length")?.to_string();
            match (l1, l2, emd, dl_edit.is_empty(), lcp_cell.is_empty(), adv_length.is_empty()) {
                (Some(l1), Some(l2), Some(emd), false, false, false) => Some(PanelColumns {
                    l1,
                    l2,
                    emd,
                    dl_edit: dl_edit
                        .parse()
                        .map_err(|e| cells.error(format!("bad `dl_edit` value: {e}")))?,
                    lcp: lcp_cell
                        .parse()
                        .map_err(|e| cells.error(format!("bad `lcp` value: {e}")))?,
                    adv_length: adv_length
                        .parse()
                        .map_err(|e| cells.error(format!("bad `adv_length` value: {e}")))?,
                }),
                (None, None, None, true, true, true) => None,
                _ => return Err(cells.error("partially filled distance panel".into())),
            }
        } else {
            None
        };
        let profile_cells = if level.has_profile() {
            let dl_norm = cells.opt_f64("dl_norm")?;
            let emd_norm = cells.opt_f64("emd_norm")?;
            let profile_cell = cells.next("profile")?;
            match (dl_norm, emd_norm, profile_cell.is_empty()) {
                (Some(dl_norm), Some(emd_norm), false) => {
                    let profile = ClusterProfile::parse(profile_cell).ok_or_else(|| {
                        cells.error(format!("bad `profile` value {profile_cell:?}"))
                    })?;
                    Some(ProfileColumns { dl_norm, emd_norm, profile })
                }
                (None, None, true) => None,
                _ => return Err(cells.error("partially filled profile columns".into())),
            }
        } else {
            None
        };
        rows.push(ResultRow {
            attack,
            strategy,
            case_id,
            prefix_length,
            label,
            original,
            adversarial,
            original_prob,
            adversarial_prob,
            flipped,
            latent_distance,
            candidate_count,
            status,
            panel,
            profile_cells,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// stage implementations
// ---------------------------------------------------------------------------

/// Threshold selection and quality of the trained classifier, persisted for
/// inspection alongside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub threshold: DecisionThreshold,
    /// AUC on the validation slice; absent when the slice holds one class.
    pub validation_auc: Option<f64>,
    pub fit_count: usize,
    pub validation_count: usize,
    pub train_count: usize,
}

/// Quartile thresholds used by the profile stage, with the pooling scope
/// they were computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    /// How the threshold population was scoped.
    pub pooling: String,
    /// Number of profiled results the quartiles were computed over.
    pub population: usize,
    pub thresholds: QuartileThresholds,
}

fn stage_ingest(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let log = match (&config.log.source, &config.log.synthetic) {
        (Some(path), None) => parse_log(path, &config.log.schema)?,
        (None, Some(section)) => {
            let spec = section.to_spec();
            generate_synthetic_log(&spec, seeding::derive_seed(config.run.seed, "synth"))?
        }
        _ => {
            return Err(HarnessError::Config {
                reason: "the [log] section needs exactly one of `source` and [log.synthetic]"
                    .into(),
            })
        }
    };
    log::info!("ingested {} traces", log.len());
    write_log(&log, &paths.log_csv(), &artifact_schema())?;
    Ok(vec![LOG_FILE.into()])
}

fn stage_split(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    require(&paths.log_csv(), Stage::Ingest)?;
    let log = parse_log(&paths.log_csv(), &artifact_schema())?;
    // The alphabet covers the whole log, so prefixes on either side of the
    // split always encode.
    let vocab = ActivityVocabulary::from_log(&log);
    let (train_log, test_log) = temporal_split(&log, config.split.fraction)?;
    // The same fraction carves a validation slice out of the training side
    // for threshold selection.
    let (fit_log, validation_log) = temporal_split(&train_log, config.split.fraction)?;
    let extract = |source: &EventLog| -> Result<PrefixLog, SplitError> {
        let prefixes = extract_prefixes(source, config.prefix.min_length, config.prefix.max_length)?;
        Ok(if config.prefix.dedup {
            deduplicate(&prefixes, config.prefix.remove_ambiguous)
        } else {
            prefixes
        })
    };
    let train = extract(&train_log)?;
    let fit = extract(&fit_log)?;
    let validation = extract(&validation_log)?;
    let test = extract(&test_log)?;
    log::info!(
        "split into {} train / {} fit / {} validation / {} test prefixes",
        train.len(),
        fit.len(),
        validation.len(),
        test.len()
    );
    save_json(&paths.vocab(), &vocab, true)?;
    save_json(&paths.prefixes_train(), &train, false)?;
    save_json(&paths.prefixes_fit(), &fit, false)?;
    save_json(&paths.prefixes_validation(), &validation, false)?;
    save_json(&paths.prefixes_test(), &test, false)?;
    Ok(vec![
        VOCAB_FILE.into(),
        PREFIXES_TRAIN_FILE.into(),
        PREFIXES_FIT_FILE.into(),
        PREFIXES_VALIDATION_FILE.into(),
        PREFIXES_TEST_FILE.into(),
    ])
}

fn stage_train(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let vocab: ActivityVocabulary = load_json(&paths.vocab(), Stage::Split)?;
    let train: PrefixLog = load_json(&paths.prefixes_train(), Stage::Split)?;
    let fit: PrefixLog = load_json(&paths.prefixes_fit(), Stage::Split)?;
    let validation: PrefixLog = load_json(&paths.prefixes_validation(), Stage::Split)?;

    let mode = config.classifier.kind().input_mode();
    let max_length = config.prefix.max_length;
    let fit_data = encode_dataset(&fit, &vocab, mode, max_length)?;
    let validation_data = encode_dataset(&validation, &vocab, mode, max_length)?;
    let mut classifier = train_classifier(
        &fit_data,
        &config.classifier,
        seeding::derive_seed(config.run.seed, "train/classifier"),
    )?;
    let threshold = select_threshold(&classifier, &validation_data)?;
    classifier.threshold = threshold.tau;
    let validation_auc = match evaluate_auc(&classifier, &validation_data) {
        Ok(auc) => Some(auc),
        Err(PredictionError::SingleClass) => None,
        Err(error) => return Err(error.into()),
    };
    log::info!(
        "trained {} classifier: tau {:.4}, validation AUC {}",
        config.classifier.kind().name(),
        threshold.tau,
        validation_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
    );
    save_json(&paths.classifier(), &classifier, false)?;

    for label in [Outcome::Negative, Outcome::Positive] {
        let class_prefixes: Vec<Prefix> = train.of_class(label).into_iter().cloned().collect();
        let stream = format!("train/vae/{}", outcome_name(label));
        let vae_config = config
            .vae
            .for_label(label)
            .to_config(max_length, seeding::derive_seed(config.run.seed, &stream));
        let manifold = train_class_vae(&class_prefixes, label, &vocab, &vae_config)?;
        log::info!("trained {} manifold on {} prefixes", outcome_name(label), class_prefixes.len());
        save_json(&paths.manifold(label), &manifold, false)?;
    }

    let summary = TrainSummary {
        threshold,
        validation_auc,
        fit_count: fit.len(),
        validation_count: validation.len(),
        train_count: train.len(),
    };
    save_json(&paths.train_summary(), &summary, true)?;
    Ok(vec![
        CLASSIFIER_FILE.into(),
        MANIFOLD_NEGATIVE_FILE.into(),
        MANIFOLD_POSITIVE_FILE.into(),
        TRAIN_SUMMARY_FILE.into(),
    ])
}

fn stage_attack(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let vocab: ActivityVocabulary = load_json(&paths.vocab(), Stage::Split)?;
    let classifier: Classifier = load_json(&paths.classifier(), Stage::Train)?;
    let negative: ClassManifold = load_json(&paths.manifold(Outcome::Negative), Stage::Train)?;
    let positive: ClassManifold = load_json(&paths.manifold(Outcome::Positive), Stage::Train)?;
    let manifolds = ManifoldPair::new(negative, positive)?;
    let test: PrefixLog = load_json(&paths.prefixes_test(), Stage::Split)?;
    let train: PrefixLog = load_json(&paths.prefixes_train(), Stage::Split)?;
    let table = build_position_activity_table(&train);

    let mut rows = Vec::new();
    for (index, attack) in config.attacks.iter().enumerate() {
        let mut attack = attack.clone();
        // One named stream per configured attack; the index keeps repeated
        // identical entries distinct.
        attack.seed = seeding::derive_seed(
            config.run.seed,
            &format!("attack/{index}/{}", attack.method_identity()),
        );
        let results =
            generate_adversarials(&test, &classifier, &manifolds, Some(&table), &vocab, &attack)?;
        log::info!(
            "attack {}: {} rows, {} flipped",
            attack.method_identity(),
            results.len(),
            results.iter().filter(|r| r.flipped).count()
        );
        rows.extend(results.into_iter().map(ResultRow::from_adversarial));
    }
    write_result_rows(&paths.attacks_csv(), &rows, TableLevel::Attacks)?;
    Ok(vec![ATTACKS_FILE.into()])
}

fn stage_evaluate(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let _ = config;
    let vocab: ActivityVocabulary = load_json(&paths.vocab(), Stage::Split)?;
    let mut rows = read_result_rows(&paths.attacks_csv(), TableLevel::Attacks)?;
    for row in &mut rows {
        if row.status != AttackStatus::Generated {
            continue;
        }
        let original = aggregate_encode_activities(&row.original, &vocab)?;
        let adversarial = aggregate_encode_activities(&row.adversarial, &vocab)?;
        row.panel = Some(PanelColumns {
            l1: metrics::l1_distance(&original, &adversarial)?,
            l2: metrics::l2_distance(&original, &adversarial)?,
            emd: metrics::emd_sequences(&row.original, &row.adversarial, &vocab)?,
            dl_edit: metrics::dl_edit(&row.original, &row.adversarial),
            lcp: metrics::lcp(&row.original, &row.adversarial),
            adv_length: row.adversarial.len(),
        });
    }
    write_result_rows(&paths.results_csv(), &rows, TableLevel::Results)?;
    Ok(vec![RESULTS_FILE.into()])
}

fn stage_profile(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let _ = config;
    let mut rows = read_result_rows(&paths.results_csv(), TableLevel::Results)?;
    let generated: Vec<usize> =
        (0..rows.len()).filter(|&i| rows[i].panel.is_some()).collect();
    let population: Vec<NormalizedAttackMetrics> = generated
        .iter()
        .map(|&i| {
            let row = &rows[i];
            let panel = row.panel.as_ref().expect("filtered on panel presence");
            let metric_panel = MetricPanel {
                latent_euclidean: row.latent_distance.unwrap_or(0.0),
                l1: panel.l1,
                l2: panel.l2,
                emd: panel.emd,
                dl_edit: panel.dl_edit,
                lcp: panel.lcp,
            };
            normalize_metrics(&metric_panel, row.prefix_length, row.flipped)
        })
        .collect();
    let (thresholds, profiles) = profile_population(&population)?;
    for ((&slot, profile), normalized) in generated.iter().zip(profiles).zip(&population) {
        rows[slot].profile_cells = Some(ProfileColumns {
            dl_norm: normalized.dl_norm,
            emd_norm: normalized.emd_norm,
            profile,
        });
    }
    write_result_rows(&paths.profiles_csv(), &rows, TableLevel::Profiles)?;
    let record = ThresholdRecord {
        pooling: "all attack methods of this run pooled over one event log and classifier".into(),
        population: population.len(),
        thresholds,
    };
    save_json(&paths.profile_thresholds(), &record, true)?;
    Ok(vec![PROFILES_FILE.into(), PROFILE_THRESHOLDS_FILE.into()])
}

fn stage_report(config: &RunConfig, paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    let _ = config;
    let rows = read_result_rows(&paths.profiles_csv(), TableLevel::Profiles)?;
    emit_report(&rows, paths)
}

// ---------------------------------------------------------------------------
// report emission
// ---------------------------------------------------------------------------

/// (attack, strategy) pairs in first-appearance order.
fn method_order(rows: &[ResultRow]) -> Vec<(String, String)> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in rows {
        let key = (row.attack.clone(), row.strategy.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn mean_panel(members: &[&ResultRow], get: impl Fn(&PanelColumns) -> f64) -> Option<f64> {
    let values: Vec<f64> = members.iter().filter_map(|r| r.panel.as_ref().map(&get)).collect();
    mean(&values)
}

fn write_report_summary(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record([
            "attack",
            "strategy",
            "success_rate",
            "mean_latent_euclidean",
            "mean_l1",
            "mean_l2",
            "mean_emd",
            "mean_dl_edit",
            "mean_lcp",
            "mean_adv_length",
        ])
        .map_err(|e| csv_error(path, e))?;
    for (attack, strategy) in method_order(rows) {
        let members: Vec<&ResultRow> =
            rows.iter().filter(|r| r.attack == attack && r.strategy == strategy).collect();
        let flags: Vec<bool> = members.iter().map(|r| r.flipped).collect();
        // Success counts every attacked prefix in its denominator, failures
        // included; the distance means describe the generated adversarials.
        let rate = metrics::success_rate(&flags);
        let latent: Vec<f64> = members.iter().filter_map(|r| r.latent_distance).collect();
        writer
            .write_record([
                attack.as_str(),
                strategy.as_str(),
                &fmt_f64(rate),
                &fmt_opt(mean(&latent)),
                &fmt_opt(mean_panel(&members, |p| p.l1)),
                &fmt_opt(mean_panel(&members, |p| p.l2)),
                &fmt_opt(mean_panel(&members, |p| p.emd)),
                &fmt_opt(mean_panel(&members, |p| p.dl_edit as f64)),
                &fmt_opt(mean_panel(&members, |p| p.lcp as f64)),
                &fmt_opt(mean_panel(&members, |p| p.adv_length as f64)),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

fn write_report_by_length(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let mut by_length: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for row in rows {
        let slot = by_length.entry(row.prefix_length).or_insert((0, 0));
        slot.0 += 1;
        if row.flipped {
            slot.1 += 1;
        }
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["prefix_length", "n_results", "n_flipped", "success_rate"])
        .map_err(|e| csv_error(path, e))?;
    for (length, (total, flipped)) in by_length {
        writer
            .write_record([
                length.to_string(),
                total.to_string(),
                flipped.to_string(),
                fmt_f64(flipped as f64 / total as f64),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

fn write_report_profiles(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let methods = method_order(rows);
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(["profile", "attack", "strategy", "count"]).map_err(|e| csv_error(path, e))?;
    for profile in ClusterProfile::ALL {
        for (attack, strategy) in &methods {
            let count = rows
                .iter()
                .filter(|r| {
                    r.attack == *attack
                        && r.strategy == *strategy
                        && r.profile_cells.map(|c| c.profile) == Some(profile)
                })
                .count();
            writer
                .write_record([profile.name(), attack, strategy, &count.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    writer.flush().map_err(|e| io_error(path, e))
}

/// Writes the three report tables: the per-method summary, the
/// success-by-prefix-length table and the profile counts. Errors when
/// there are no rows to report on.
pub fn emit_report(rows: &[ResultRow], paths: &RunPaths) -> Result<Vec<String>, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    write_report_summary(rows, &paths.report_summary())?;
    write_report_by_length(rows, &paths.report_success_by_length())?;
    write_report_profiles(rows, &paths.report_profiles())?;
    Ok(vec![
        REPORT_SUMMARY_FILE.into(),
        REPORT_BY_LENGTH_FILE.into(),
        REPORT_PROFILES_FILE.into(),
    ])
}

// ---------------------------------------------------------------------------
// orchestration
// ---------------------------------------------------------------------------

/// Runs one stage against an output directory, assuming a validated
/// configuration, and returns the artifact names it wrote.
pub fn execute_stage(
    config: &RunConfig,
    paths: &RunPaths,
    stage: Stage,
) -> Result<Vec<String>, HarnessError> {
    match stage {
        Stage::Ingest => stage_ingest(config, paths),
        Stage::Split => stage_split(config, paths),
        Stage::Train => stage_train(config, paths),
        Stage::Attack => stage_attack(config, paths),
        Stage::Evaluate => stage_evaluate(config, paths),
        Stage::Profile => stage_profile(config, paths),
        Stage::Report => stage_report(config, paths),
    }
}

/// Validates the configuration, then runs the given stages in order against
/// `out_dir`. Every completed stage is recorded in the manifest and the
/// manifest is persisted before the next stage starts, so a failed run
/// leaves a partial manifest naming everything that did complete; the error
/// of a failed stage carries the stage name. A directory whose manifest was
/// produced under a different configuration is refused.
pub fn run_stages(
    config: &RunConfig,
    out_dir: &Path,
    stages: &[Stage],
) -> Result<RunManifest, HarnessError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let paths = RunPaths::new(out_dir);
    let hash = config.hash_hex();
    let mut manifest = match RunManifest::load(&paths)? {
        Some(existing) => {
            if existing.config_hash != hash {
                return Err(HarnessError::ManifestMismatch {
                    expected: hash,
                    found: existing.config_hash,
                });
            }
            existing
        }
        None => RunManifest::new(config),
    };
    for &stage in stages {
        log::info!("running stage `{stage}`");
        let artifacts = execute_stage(config, &paths, stage)
            .map_err(|e| HarnessError::Stage { stage: stage.name(), cause: Box::new(e) })?;
        manifest
            .stages
            .insert(stage.name().into(), StageRecord { completed_at: now_rfc3339(), artifacts });
        save_json(&paths.manifest(), &manifest, true)?;
    }
    Ok(manifest)
}

/// Runs the full pipeline: ingest, split, train, attack, evaluate, profile,
/// report.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> Result<RunManifest, HarnessError> {
    run_stages(config, out_dir, &Stage::ALL)
}
