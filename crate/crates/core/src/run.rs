//! Command drivers shared by the CLI binary and the C interface: resolved
//! run configuration, provenance, and one function per analysis.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bench::{nn_filter_benchmark, BenchmarkReport, DEFAULT_WINDOWS};
use crate::cluster::{cluster_report, hdbscan_fit, points_csv, ClusterAssignment, ClusterError, ClusterReport, HdbscanParams};
use crate::features::{
    build_task, condition_matrix, Exclusion, ExtractConfig, FeatureError, FeatureMatrix, Task, FEATURE_NAMES, N_FEATURES,
};
use crate::hrv::NnCleaning;
use crate::ingest::IngestError;
use crate::learn::{
    conditioning_benchmark, kbest_curve, permutation_importance, select_k_best, train_forest, ConditioningRow, CvConfig,
    Dataset, ForestParams, KBestCurve, LearnError, Selector,
};
use crate::numeric::derive_seed;
use crate::pipeline::{build_matrix, process_study, StudyError};
use crate::stats::{paired_feature_tests, FeatureTestReport, StatsConfig};
use crate::synth::{SynthConfig, SynthError};

pub const TOOL_NAME: &str = "ctxsense";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const INSUFFICIENT_DATA: i32 = 4;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    InsufficientData(String),
    #[error("{0}")]
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => exit::USAGE,
            RunError::Parse(_) => exit::PARSE,
            RunError::InsufficientData(_) => exit::INSUFFICIENT_DATA,
            RunError::Internal(_) => exit::INTERNAL,
        }
    }
}

impl From<StudyError> for RunError {
    fn from(e: StudyError) -> Self {
        match &e {
            StudyError::Missing(_) => RunError::Usage(e.to_string()),
            StudyError::Io { .. } | StudyError::Ingest { .. } => RunError::Parse(e.to_string()),
            StudyError::Assembly(_) => RunError::Internal(e.to_string()),
        }
    }
}

impl From<LearnError> for RunError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Params(m) => RunError::Usage(m),
            LearnError::Cv(m) | LearnError::Train(m) | LearnError::Metric(m) => RunError::InsufficientData(m),
        }
    }
}

impl From<FeatureError> for RunError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Table { .. } => RunError::Parse(e.to_string()),
            FeatureError::TaskConstruction(_) | FeatureError::InsufficientData(_) | FeatureError::Missing(_) => {
                RunError::InsufficientData(e.to_string())
            }
            FeatureError::Assembly(_) => RunError::Internal(e.to_string()),
        }
    }
}

impl From<ClusterError> for RunError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::TooFewRows { .. } => RunError::InsufficientData(e.to_string()),
            _ => RunError::Usage(e.to_string()),
        }
    }
}

impl From<SynthError> for RunError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(_) => RunError::Usage(e.to_string()),
            SynthError::Io { .. } => RunError::Internal(e.to_string()),
        }
    }
}

impl From<IngestError> for RunError {
    fn from(e: IngestError) -> Self {
        RunError::Parse(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub extract: ExtractConfig,
    pub center: bool,
    pub scale: bool,
    pub cv: CvConfig,
    pub stats: StatsConfig,
    pub importance_repeats: usize,
    pub cluster: HdbscanParams,
    pub nn_methods: Vec<NnCleaning>,
    pub nn_windows: Vec<Option<f64>>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            extract: ExtractConfig::default(),
            center: true,
            scale: false,
            cv: CvConfig::default(),
            stats: StatsConfig::default(),
            importance_repeats: 10,
            cluster: HdbscanParams::default(),
            nn_methods: NnCleaning::all_defaults().to_vec(),
            nn_windows: DEFAULT_WINDOWS.to_vec(),
            synth: SynthConfig::default(),
        }
    }
}

const ENUM_TAGS: [&str; 3] = ["method", "type", "kind"];

/// Overlay `patch` on `base`. Keys missing from `base` are rejected; an
/// object switching enum variant (a different tag value) replaces the
/// base object whole.
fn merge(base: &mut Value, patch: Value, path: &str) -> Result<(), String> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let switches = ENUM_TAGS.iter().any(|t| p.get(*t).is_some_and(|v| b.get(*t) != Some(v)));
            if switches {
                *b = p;
                return Ok(());
            }
            for (k, v) in p {
                let here = format!("{path}.{k}");
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(format!("unknown key {}", here.trim_start_matches('.'))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a (possibly partial) JSON document.
    pub fn from_json_patch(text: &str) -> Result<Self, RunError> {
        let patch: Value = serde_json::from_str(text).map_err(|e| RunError::Usage(format!("config: {e}")))?;
        let mut base = serde_json::to_value(RunConfig::default()).map_err(|e| RunError::Internal(e.to_string()))?;
        merge(&mut base, patch, "").map_err(|e| RunError::Usage(format!("config: {e}")))?;
        serde_json::from_value(base).map_err(|e| RunError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, RunError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| RunError::Usage(format!("{}: {e}", p.display())))?;
                Self::from_json_patch(&text)
            }
        }
    }

    /// Propagate the master seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.cv.forest.seed = derive_seed(seed, 1);
        self.stats.seed = derive_seed(seed, 2);
        self.synth.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.cv.forest.n_trees == 0 {
            return Err(RunError::Usage("n_trees must be at least 1".into()));
        }
        if self.cv.alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(RunError::Usage("ccp_alpha values must be non-negative".into()));
        }
        if !(self.stats.confidence > 0.0 && self.stats.confidence < 1.0) || self.stats.n_resamples == 0 {
            return Err(RunError::Usage("bootstrap confidence must be in (0, 1) with at least one resample".into()));
        }
        if self.jobs == Some(0) {
            return Err(RunError::Usage("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, inputs: &[(&str, &str)], config: &RunConfig) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed: config.seed,
            config: config.clone(),
        }
    }

    /// Single-line JSON for `# ` comment headers.
    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("provenance serialises")
    }

    pub fn csv(&self, body: &str) -> String {
        format!("# {}\n{body}", self.line())
    }

    pub fn json<T: Serialize>(&self, report: &T) -> String {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            provenance: &'a Provenance,
            report: &'a T,
        }
        let mut s = serde_json::to_string_pretty(&Wrapped { provenance: self, report }).expect("report serialises");
        s.push('\n');
        s
    }
}

pub struct Extracted {
    pub matrix: FeatureMatrix,
    pub exclusions: Vec<Exclusion>,
}

pub fn extract(study: &Path, cfg: &RunConfig) -> Result<Extracted, RunError> {
    let processed = process_study(study, &cfg.extract)?;
    if processed.is_empty() {
        return Err(RunError::InsufficientData(format!("no intervals found in {}", study.display())));
    }
    let (matrix, exclusions) = build_matrix(&processed, &cfg.extract.nn_cleaning, cfg.extract.nn_window_s, &cfg.extract.lomb)?;
    if matrix.is_empty() {
        return Err(RunError::InsufficientData(format!("all {} intervals were excluded", exclusions.len())));
    }
    Ok(Extracted { matrix, exclusions })
}

/// Published reference values kept alongside each task's results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTargets {
    pub significant_features: usize,
    pub minimal_k: Option<usize>,
}

pub fn reference_targets(task: Task) -> ReferenceTargets {
    let (significant_features, minimal_k) = match task {
        Task::AloneVsSocial => (9, Some(2)),
        Task::DuringVsPrePost => (12, Some(5)),
        Task::PreVsPost => (8, None),
        Task::DyadVsGroup => (4, None),
        Task::ImplicitVsExplicit => (1, None),
    };
    ReferenceTargets {
        significant_features,
        minimal_k,
    }
}

/// Default feature count for clustering a task.
pub fn default_cluster_k(task: Task) -> usize {
    reference_targets(task).minimal_k.unwrap_or(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedImportance {
    pub feature: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub k: usize,
    pub selector: Option<Selector>,
    pub ccp_alpha: f64,
    pub n_repeats: usize,
    pub features: Vec<NamedImportance>,
}

impl ImportanceReport {
    pub fn figure_csv(&self) -> String {
        let mut out = String::from("feature,importance_mean,importance_sd\n");
        for f in &self.features {
            out.push_str(&format!("{},{},{}\n", f.feature, f.mean, f.sd));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub classes: [String; 2],
    pub n_rows: usize,
    pub n_participants: usize,
    pub univariate: FeatureTestReport,
    pub kbest: KBestCurve,
    pub importance: ImportanceReport,
    pub reference: ReferenceTargets,
}

fn most_common<T: PartialEq + Copy>(items: impl Iterator<Item = T>, order: &[T]) -> Option<T> {
    let items: Vec<T> = items.collect();
    let mut best: Option<(T, usize)> = None;
    for &o in order {
        let c = items.iter().filter(|&&i| i == o).count();
        if c > 0 && best.is_none_or(|b| c > b.1) {
            best = Some((o, c));
        }
    }
    best.map(|b| b.0)
}

/// Univariate tests, k-best curve and a full-data importance fit for one
/// task on the conditioned matrix.
pub fn analyze_task(raw: &FeatureMatrix, task: Task, cfg: &RunConfig) -> Result<TaskReport, RunError> {
    let conditioned = condition_matrix(raw, cfg.center, cfg.scale);
    let ds = build_task(&conditioned, task)?;
    let univariate = paired_feature_tests(&ds, &cfg.stats);
    let all: Vec<usize> = (0..N_FEATURES).collect();
    let data = Dataset::from_task(&ds, &all);
    let kbest = kbest_curve(&data, &cfg.cv)?;

    // Final model on the full dataset at the minimal k, with the selector
    // and pruning level chosen most often across that k's folds.
    let k = kbest.minimal_k;
    let report = &kbest.reports[k - 1];
    let selector = most_common(report.folds.iter().map(|f| f.selector), &[Some(Selector::Anova), Some(Selector::MutualInfo), None]).flatten();
    let alphas: Vec<f64> = cfg.cv.alphas.clone();
    let alpha = most_common(report.folds.iter().map(|f| f.ccp_alpha), &alphas).unwrap_or(0.0);
    let cols = match selector {
        Some(s) if k < N_FEATURES => select_k_best(&data, k, s)?,
        _ => all.clone(),
    };
    let selected = data.select_columns(&cols);
    let params = ForestParams {
        ccp_alpha: alpha,
        seed: derive_seed(cfg.cv.forest.seed, 0x1A9),
        ..cfg.cv.forest
    };
    let model = train_forest(&selected, &params)?;
    let imp = permutation_importance(&model, &selected, cfg.importance_repeats, derive_seed(cfg.seed, 3))?;
    Ok(TaskReport {
        task,
        classes: task.classes().map(String::from),
        n_rows: ds.rows.len(),
        n_participants: ds.groups.len(),
        univariate,
        kbest,
        importance: ImportanceReport {
            k,
            selector,
            ccp_alpha: alpha,
            n_repeats: cfg.importance_repeats,
            features: imp
                .into_iter()
                .map(|i| NamedImportance {
                    feature: FEATURE_NAMES[i.feature].to_string(),
                    mean: i.mean,
                    sd: i.sd,
                })
                .collect(),
        },
        reference: reference_targets(task),
    })
}

pub fn conditioning(raw: &FeatureMatrix, tasks: &[Task], cfg: &RunConfig) -> Result<Vec<ConditioningRow>, RunError> {
    Ok(conditioning_benchmark(raw, tasks, &cfg.cv)?)
}

pub fn nn_benchmark(study: &Path, tasks: &[Task], cfg: &RunConfig) -> Result<BenchmarkReport, RunError> {
    let processed = process_study(study, &cfg.extract)?;
    let mut cells = Vec::new();
    for method in &cfg.nn_methods {
        for &window in &cfg.nn_windows {
            let (m, _) = build_matrix(&processed, method, window, &cfg.extract.lomb)?;
            cells.push((*method, window, m));
        }
    }
    Ok(nn_filter_benchmark(&cells, tasks, &cfg.cv)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub task: Task,
    pub features: Vec<String>,
    pub assignment: ClusterAssignment,
    pub report: ClusterReport,
    #[serde(skip)]
    pub points_csv: String,
}

/// HDBSCAN on the conditioned task rows, restricted to `columns` or, when
/// none are given, to the `k` best features by ANOVA on the full task.
pub fn cluster_task(
    raw: &FeatureMatrix,
    task: Task,
    columns: Option<&[usize]>,
    k: Option<usize>,
    params: &HdbscanParams,
    cfg: &RunConfig,
) -> Result<ClusterOutput, RunError> {
    let conditioned = condition_matrix(raw, cfg.center, cfg.scale);
    let ds = build_task(&conditioned, task)?;
    let all: Vec<usize> = (0..N_FEATURES).collect();
    let cols = match columns {
        Some(c) => {
            if c.is_empty() || c.iter().any(|&j| j >= N_FEATURES) {
                return Err(RunError::Usage("cluster feature columns out of range".into()));
            }
            c.to_vec()
        }
        None => {
            let k = k.unwrap_or_else(|| default_cluster_k(task));
            if k == 0 || k > N_FEATURES {
                return Err(RunError::Usage(format!("k = {k} outside 1..={N_FEATURES}")));
            }
            select_k_best(&Dataset::from_task(&ds, &all), k, Selector::Anova)?
        }
    };
    let x = ds.columns(&cols);
    let assignment = hdbscan_fit(&x, params)?;
    let class_names: Vec<String> = task.classes().iter().map(|s| s.to_string()).collect();
    let labels: Vec<usize> = ds.rows.iter().map(|r| r.label as usize).collect();
    let report = cluster_report(&assignment, &labels, &class_names)?;
    let names: Vec<&str> = cols.iter().map(|&j| FEATURE_NAMES[j]).collect();
    let ids: Vec<String> = ds.rows.iter().map(|r| r.key.to_string()).collect();
    let classes: Vec<String> = labels.iter().map(|&l| class_names[l].clone()).collect();
    let points = points_csv(&ids, &names, &x, &classes, &assignment.labels);
    Ok(ClusterOutput {
        task,
        features: names.iter().map(|s| s.to_string()).collect(),
        assignment,
        report,
        points_csv: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_patch() {
        let c = RunConfig::from_json_patch(r#"{"cv": {"forest": {"n_trees": 7}}, "center": false}"#).unwrap();
        assert_eq!(c.cv.forest.n_trees, 7);
        assert!(!c.center);
        assert_eq!(c.cv.alphas, RunConfig::default().cv.alphas);
        assert!(matches!(RunConfig::from_json_patch("{"), Err(RunError::Usage(_))));
        let e = RunConfig::from_json_patch(r#"{"cv": {"forrest": {}}}"#).unwrap_err();
        assert!(e.to_string().contains("cv.forrest"), "{e}");
        let c = RunConfig::from_json_patch(r#"{"extract": {"nn_cleaning": {"method": "median", "window": 7, "tau": 0.2}}}"#)
            .unwrap();
        assert_eq!(c.extract.nn_cleaning, crate::hrv::NnCleaning::Median { window: 7, tau: 0.2 });
        let c = RunConfig::from_json_patch(r#"{"synth": {"archetypes": {"alone": 1, "social": 2, "hr_step_bpm": 5, "scr_step_per_min": 1}}}"#);
        assert!(c.is_ok(), "{c:?}");
        assert!(matches!(
            RunConfig::from_json_patch(r#"{"cv": {"forest": {"n_trees": "many"}}}"#),
            Err(RunError::Usage(_))
        ));
    }

    #[test]
    fn seed_reaches_components() {
        let a = RunConfig::default().with_seed(5);
        let b = RunConfig::default().with_seed(6);
        assert_ne!(a.cv.forest.seed, b.cv.forest.seed);
        assert_ne!(a.stats.seed, b.stats.seed);
        assert_eq!(a.synth.seed, 5);
    }

    #[test]
    fn provenance_round_trips() {
        let cfg = RunConfig::default().with_seed(3);
        let p = Provenance::new("extract", &[("study", "D")], &cfg);
        let back: Provenance = serde_json::from_str(&p.line()).unwrap();
        assert_eq!(back, p);
        assert!(p.csv("a,b\n").starts_with("# {"));
    }
}
