//! The thirteen per-interval features, the study matrix, participant-level
//! conditioning and the five task datasets.

use log::warn;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::dsp::{detect_systolic_peaks_with, ElgendiParams, Filter, FilterMode, FilterSpec, LombGrid};
use crate::eda::{clean_eda, decompose_eda_with, detect_scr_peaks_with, EdaConfig, ScrMeanMode};
use crate::hrv::{clean_nn, nn_from_peaks, NNSeries, NnCleaning};
use crate::ingest::{Context, Event, IntervalSlice, Phase, PhaseClass};
use crate::numeric::{mean, percentile_sorted, sample_sd};

pub const N_FEATURES: usize = 13;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "nn_mean",
    "nn_sd",
    "nn_rmssd",
    "nn_prc20",
    "nn_prc80",
    "nn_lfn",
    "nn_hfn",
    "st_mean",
    "acc_mean",
    "acc_sd",
    "scl_mean",
    "scr_mean",
    "scr_peaksn",
];

/// Column indices of the seven NN-derived features.
pub const NN_FEATURES: [usize; 7] = [0, 1, 2, 3, 4, 5, 6];

/// Minimum number of NN intervals for a row to be kept.
pub const MIN_NN_INTERVALS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature missing: {0}")]
    Missing(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("task construction error: {0}")]
    TaskConstruction(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("feature table error at line {line}: {message}")]
    Table { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub nn_mean: f64,
    pub nn_sd: f64,
    pub nn_rmssd: f64,
    pub nn_prc20: f64,
    pub nn_prc80: f64,
    pub nn_lfn: f64,
    pub nn_hfn: f64,
    pub st_mean: f64,
    pub acc_mean: f64,
    pub acc_sd: f64,
    pub scl_mean: f64,
    pub scr_mean: f64,
    pub scr_peaksn: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.nn_mean,
            self.nn_sd,
            self.nn_rmssd,
            self.nn_prc20,
            self.nn_prc80,
            self.nn_lfn,
            self.nn_hfn,
            self.st_mean,
            self.acc_mean,
            self.acc_sd,
            self.scl_mean,
            self.scr_mean,
            self.scr_peaksn,
        ]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        Self {
            nn_mean: a[0],
            nn_sd: a[1],
            nn_rmssd: a[2],
            nn_prc20: a[3],
            nn_prc80: a[4],
            nn_lfn: a[5],
            nn_hfn: a[6],
            st_mean: a[7],
            acc_mean: a[8],
            acc_sd: a[9],
            scl_mean: a[10],
            scr_mean: a[11],
            scr_peaksn: a[12],
        }
    }
}

/// Per-interval processing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub ppg_order: usize,
    pub ppg_low_hz: f64,
    pub ppg_high_hz: f64,
    pub filter_mode: FilterMode,
    pub elgendi: ElgendiParams,
    pub nn_cleaning: NnCleaning,
    pub lomb: LombGrid,
    pub eda: EdaConfig,
    /// Only NN intervals opening within this many seconds of the interval
    /// start are used; `None` uses the whole interval.
    pub nn_window_s: Option<f64>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            ppg_order: 3,
            ppg_low_hz: 0.5,
            ppg_high_hz: 8.0,
            filter_mode: FilterMode::ZeroPhase,
            elgendi: ElgendiParams::default(),
            nn_cleaning: NnCleaning::automatic(),
            lomb: LombGrid::default(),
            eda: EdaConfig::default(),
            nn_window_s: None,
        }
    }
}

/// The seven NN features from a cleaned series.
pub fn nn_features(nn: &NNSeries, grid: &LombGrid) -> Result<[f64; 7], FeatureError> {
    let x = &nn.intervals;
    if x.len() < MIN_NN_INTERVALS {
        return Err(FeatureError::Missing(format!(
            "{} NN intervals after cleaning, need {MIN_NN_INTERVALS}",
            x.len()
        )));
    }
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let rmssd = {
        let ss: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        (ss / (x.len() - 1) as f64).sqrt()
    };
    let psd = crate::dsp::lomb_scargle_psd(&nn.times, x, grid.fmin, grid.fmax, grid.n_freqs)
        .map_err(|e| FeatureError::Missing(format!("NN spectrum: {e}")))?;
    let total = psd.total_power();
    let (lfn, hfn) = if total > 0.0 {
        (psd.band_power(0.04, 0.15) / total, psd.band_power(0.15, 0.40) / total)
    } else {
        (0.0, 0.0)
    };
    Ok([
        mean(x),
        sample_sd(x),
        rmssd,
        percentile_sorted(&sorted, 20.0),
        percentile_sorted(&sorted, 80.0),
        lfn,
        hfn,
    ])
}

/// Accelerometer magnitude mean and sample SD.
pub fn acc_features(acc: &[[f64; 3]]) -> (f64, f64) {
    let mag: Vec<f64> = acc.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect();
    (mean(&mag), sample_sd(&mag))
}

/// One interval after the signal stages, before NN cleaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedInterval {
    pub participant_id: String,
    pub event: Event,
    pub phase: Phase,
    pub start: f64,
    pub duration: f64,
    /// Uncleaned NN series, or why there is none.
    pub nn_raw: Result<NNSeries, String>,
    /// st_mean, acc_mean, acc_sd, scl_mean, scr_mean, scr_peaksn.
    pub body: Result<[f64; 6], String>,
}

impl ProcessedInterval {
    pub fn features(
        &self,
        cleaning: &NnCleaning,
        window_s: Option<f64>,
        grid: &LombGrid,
    ) -> Result<FeatureVector, FeatureError> {
        let raw = self.nn_raw.as_ref().map_err(|e| FeatureError::Missing(e.clone()))?;
        let body = self.body.as_ref().map_err(|e| FeatureError::Missing(e.clone()))?;
        let windowed;
        let raw = match window_s {
            Some(w) => {
                windowed = raw.truncated(w);
                &windowed
            }
            None => raw,
        };
        if raw.is_empty() {
            return Err(FeatureError::Missing("no NN intervals in window".into()));
        }
        let nn = clean_nn(raw, cleaning).map_err(|e| FeatureError::Missing(e.to_string()))?;
        let n = nn_features(&nn, grid)?;
        let mut a = [0.0; N_FEATURES];
        a[..7].copy_from_slice(&n);
        a[7..].copy_from_slice(body);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Missing("non-finite feature".into()));
        }
        Ok(FeatureVector::from_array(a))
    }

    pub fn key(&self) -> RowKey {
        RowKey {
            participant_id: self.participant_id.clone(),
            event: self.event,
            phase: self.phase,
        }
    }
}

/// Run the PPG, EDA, ACC and TMP stages on one slice.
pub fn process_slice(slice: &IntervalSlice, cfg: &ExtractConfig) -> ProcessedInterval {
    let ppg = &slice.streams.ppg;
    let nn_raw = (|| {
        let signal = ppg.scalar().ok_or("PPG stream is not scalar")?;
        let filter = Filter::new(FilterSpec::bandpass(cfg.ppg_order, cfg.ppg_low_hz, cfg.ppg_high_hz, ppg.rate))
            .map_err(|e| e.to_string())?;
        let filtered = filter.apply(signal, cfg.filter_mode).map_err(|e| format!("PPG: {e}"))?;
        let peaks = detect_systolic_peaks_with(&filtered, ppg.rate, &cfg.elgendi);
        let mut nn = nn_from_peaks(&peaks, ppg.rate).map_err(|e| format!("PPG: {e}"))?;
        // Times relative to the interval start rather than the first sample.
        let offset = ppg.start_time - slice.start;
        nn.times.iter_mut().for_each(|t| *t += offset);
        Ok::<_, String>(nn)
    })();

    let body = (|| {
        let tmp = slice.streams.tmp.scalar().ok_or("TMP stream is not scalar")?;
        let acc = slice.streams.acc.triaxial().ok_or("ACC stream is not triaxial")?;
        if tmp.is_empty() || acc.is_empty() {
            return Err("empty TMP or ACC slice".to_string());
        }
        let eda_stream = &slice.streams.eda;
        let eda_raw = eda_stream.scalar().ok_or("EDA stream is not scalar")?;
        let eda = clean_eda(eda_raw, eda_stream.rate, &cfg.eda).map_err(|e| format!("EDA: {e}"))?;
        let parts = decompose_eda_with(&eda, eda_stream.rate, cfg.eda.tonic_cutoff_hz).map_err(|e| format!("EDA: {e}"))?;
        let scr = detect_scr_peaks_with(&parts.phasic, eda_stream.rate, cfg.eda.scr_threshold, cfg.eda.scr_min_separation_s);
        let scr_mean = match cfg.eda.scr_mean {
            ScrMeanMode::Phasic => mean(&parts.phasic),
            ScrMeanMode::PeakAmplitude if scr.is_empty() => 0.0,
            ScrMeanMode::PeakAmplitude => mean(&scr.amplitudes),
        };
        let (acc_mean, acc_sd) = acc_features(acc);
        Ok([
            mean(tmp),
            acc_mean,
            acc_sd,
            mean(&parts.tonic),
            scr_mean,
            scr.len() as f64 / slice.duration(),
        ])
    })();

    ProcessedInterval {
        participant_id: slice.participant_id.clone(),
        event: slice.event,
        phase: slice.phase,
        start: slice.start,
        duration: slice.duration(),
        nn_raw,
        body,
    }
}

/// All thirteen features for a slice with the configured cleaning and window.
pub fn compute_features(slice: &IntervalSlice, cfg: &ExtractConfig) -> Result<FeatureVector, FeatureError> {
    process_slice(slice, cfg).features(&cfg.nn_cleaning, cfg.nn_window_s, &cfg.lomb)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub participant_id: String,
    pub event: Event,
    pub phase: Phase,
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.participant_id, self.event, self.phase)
    }
}

/// A row excluded from the matrix, with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub event: Event,
    pub phase: Phase,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub key: RowKey,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    Raw,
    Centered,
    Scaled,
    CenteredScaled,
}

impl Conditioning {
    pub fn from_flags(center: bool, scale: bool) -> Self {
        match (center, scale) {
            (false, false) => Conditioning::Raw,
            (true, false) => Conditioning::Centered,
            (false, true) => Conditioning::Scaled,
            (true, true) => Conditioning::CenteredScaled,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Conditioning::Raw => (false, false),
            Conditioning::Centered => (true, false),
            Conditioning::Scaled => (false, true),
            Conditioning::CenteredScaled => (true, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
    pub conditioning: Conditioning,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features.to_array()[j]).collect()
    }

    pub fn participants(&self) -> Vec<String> {
        let mut p: Vec<String> = self.rows.iter().map(|r| r.key.participant_id.clone()).collect();
        p.dedup();
        p.sort();
        p.dedup();
        p
    }
}

/// Rows are given with their interval start time and ordered by
/// (participant, start).
pub fn assemble_matrix(rows: Vec<(f64, FeatureRow)>) -> Result<FeatureMatrix, FeatureError> {
    let mut seen = HashSet::new();
    for (_, r) in &rows {
        if !seen.insert(r.key.clone()) {
            return Err(FeatureError::Assembly(format!("duplicate row {}", r.key)));
        }
    }
    let mut rows = rows;
    rows.sort_by(|a, b| {
        a.1.key
            .participant_id
            .cmp(&b.1.key.participant_id)
            .then(a.0.total_cmp(&b.0))
    });
    Ok(FeatureMatrix {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        conditioning: Conditioning::Raw,
    })
}

/// Per participant and feature: subtract the median and/or divide by the
/// interquartile range (an IQR of zero divides by one).
pub fn condition_matrix(matrix: &FeatureMatrix, center: bool, scale: bool) -> FeatureMatrix {
    let mut out = matrix.clone();
    out.conditioning = Conditioning::from_flags(center, scale);
    if !center && !scale {
        return out;
    }
    let mut by_participant: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in matrix.rows.iter().enumerate() {
        by_participant.entry(&r.key.participant_id).or_default().push(i);
    }
    for (pid, idx) in by_participant {
        let mut flat: Vec<usize> = Vec::new();
        let mut arrays: Vec<[f64; N_FEATURES]> = idx.iter().map(|&i| matrix.rows[i].features.to_array()).collect();
        for j in 0..N_FEATURES {
            let mut col: Vec<f64> = arrays.iter().map(|a| a[j]).collect();
            col.sort_by(f64::total_cmp);
            let med = percentile_sorted(&col, 50.0);
            let mut iqr = percentile_sorted(&col, 75.0) - percentile_sorted(&col, 25.0);
            if scale && iqr == 0.0 {
                flat.push(j);
                iqr = 1.0;
            }
            for a in &mut arrays {
                if center {
                    a[j] -= med;
                }
                if scale {
                    a[j] /= iqr;
                }
            }
        }
        if !flat.is_empty() {
            let names: Vec<&str> = flat.iter().map(|&j| FEATURE_NAMES[j]).collect();
            warn!("participant {pid}: zero IQR for {}, dividing by 1", names.join(", "));
        }
        for (&i, a) in idx.iter().zip(arrays) {
            out.rows[i].features = FeatureVector::from_array(a);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their correlations are reported as 0.
    pub constant: Vec<bool>,
}

pub fn correlation_matrix(matrix: &FeatureMatrix) -> Result<CorrelationMatrix, FeatureError> {
    if matrix.len() < 2 {
        return Err(FeatureError::InsufficientData(format!(
            "correlation needs 2 rows, got {}",
            matrix.len()
        )));
    }
    let cols: Vec<Vec<f64>> = (0..N_FEATURES)
        .map(|j| {
            let c = matrix.column(j);
            let m = mean(&c);
            c.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let constant: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let mut values = vec![vec![0.0; N_FEATURES]; N_FEATURES];
    for i in 0..N_FEATURES {
        values[i][i] = 1.0;
        for j in i + 1..N_FEATURES {
            let r = if constant[i] || constant[j] {
                0.0
            } else {
                let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
        constant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    AloneVsSocial,
    DuringVsPrePost,
    PreVsPost,
    DyadVsGroup,
    ImplicitVsExplicit,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::AloneVsSocial,
        Task::DuringVsPrePost,
        Task::PreVsPost,
        Task::DyadVsGroup,
        Task::ImplicitVsExplicit,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Task::AloneVsSocial => "alone-social",
            Task::DuringVsPrePost => "during-prepost",
            Task::PreVsPost => "pre-post",
            Task::DyadVsGroup => "dyad-group",
            Task::ImplicitVsExplicit => "implicit-explicit",
        }
    }

    /// Names of label 0 and label 1.
    pub fn classes(self) -> [&'static str; 2] {
        match self {
            Task::AloneVsSocial => ["alone", "social"],
            Task::DuringVsPrePost => ["during", "pre_post"],
            Task::PreVsPost => ["pre", "post"],
            Task::DyadVsGroup => ["dyad", "group"],
            Task::ImplicitVsExplicit => ["implicit", "explicit"],
        }
    }

    /// Label of an (event, phase) row, or `None` if the row is not part of
    /// this task.
    pub fn label(self, event: Event, phase: Phase) -> Option<u8> {
        let social = event.context() == Context::Social;
        match self {
            Task::AloneVsSocial => (phase == Phase::During).then_some(social as u8),
            Task::DuringVsPrePost => social.then_some((phase.class() == PhaseClass::PrePost) as u8),
            Task::PreVsPost => match (social, phase) {
                (true, Phase::Pre) => Some(0),
                (true, Phase::Post) => Some(1),
                _ => None,
            },
            Task::DyadVsGroup => {
                let size = event.size()?;
                (phase == Phase::During).then_some((size == crate::ingest::GroupSize::Group) as u8)
            }
            Task::ImplicitVsExplicit => {
                let threat = event.threat()?;
                (phase == Phase::During).then_some((threat == crate::ingest::Threat::Explicit) as u8)
            }
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub key: RowKey,
    /// Index into `TaskDataset::groups`.
    pub group: usize,
    pub features: [f64; N_FEATURES],
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task: Task,
    pub rows: Vec<TaskRow>,
    /// Participants in sorted order.
    pub groups: Vec<String>,
}

impl TaskDataset {
    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn group_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.group).collect()
    }

    /// Row-major copy of the selected columns.
    pub fn columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| cols.iter().map(|&j| r.features[j]).collect())
            .collect()
    }

    /// Same rows with labels replaced.
    pub fn with_labels(&self, labels: &[u8]) -> TaskDataset {
        let mut out = self.clone();
        for (r, &l) in out.rows.iter_mut().zip(labels) {
            r.label = l;
        }
        out
    }
}

pub fn build_task(matrix: &FeatureMatrix, task: Task) -> Result<TaskDataset, FeatureError> {
    let mut selected: Vec<(&FeatureRow, u8)> = matrix
        .rows
        .iter()
        .filter_map(|r| task.label(r.key.event, r.key.phase).map(|l| (r, l)))
        .collect();
    for class in 0..2u8 {
        if !selected.iter().any(|(_, l)| *l == class) {
            return Err(FeatureError::TaskConstruction(format!(
                "{task}: no rows for class {:?}",
                task.classes()[class as usize]
            )));
        }
    }
    selected.sort_by(|a, b| a.0.key.participant_id.cmp(&b.0.key.participant_id));
    let mut groups: Vec<String> = selected.iter().map(|(r, _)| r.key.participant_id.clone()).collect();
    groups.dedup();
    let rows = selected
        .into_iter()
        .map(|(r, label)| TaskRow {
            key: r.key.clone(),
            group: groups.binary_search(&r.key.participant_id).unwrap(),
            features: r.features.to_array(),
            label,
        })
        .collect();
    Ok(TaskDataset { task, rows, groups })
}

pub const TABLE_KEY_COLUMNS: [&str; 3] = ["participant_id", "event", "phase"];

/// Feature table CSV. `comment`, if given, becomes a leading `# ` line.
pub fn write_matrix_csv(matrix: &FeatureMatrix, comment: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let header: Vec<&str> = TABLE_KEY_COLUMNS.iter().chain(FEATURE_NAMES.iter()).copied().collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in &matrix.rows {
        out.push_str(&format!("{},{},{}", r.key.participant_id, r.key.event, r.key.phase));
        for v in r.features.to_array() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Parse a feature table; `#` lines are skipped. Row order is kept.
pub fn read_matrix_csv(bytes: &[u8]) -> Result<FeatureMatrix, FeatureError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let table_err = |line: usize, message: String| FeatureError::Table { line, message };
    let headers = reader.headers().map_err(|e| table_err(1, e.to_string()))?.clone();
    let expected: Vec<&str> = TABLE_KEY_COLUMNS.iter().chain(FEATURE_NAMES.iter()).copied().collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(table_err(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            table_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let event: Event = rec[1].parse().map_err(|m| table_err(line, m))?;
        let phase: Phase = rec[2].parse().map_err(|m| table_err(line, m))?;
        let mut a = [0.0f64; N_FEATURES];
        for (j, slot) in a.iter_mut().enumerate() {
            let f = &rec[3 + j];
            *slot = f
                .parse()
                .map_err(|_| table_err(line, format!("bad value {f:?} for {}", FEATURE_NAMES[j])))?;
            if !slot.is_finite() {
                return Err(table_err(line, format!("non-finite {}", FEATURE_NAMES[j])));
            }
        }
        let key = RowKey {
            participant_id: rec[0].to_string(),
            event,
            phase,
        };
        if !seen.insert(key.clone()) {
            return Err(table_err(line, format!("duplicate row {key}")));
        }
        rows.push(FeatureRow {
            key,
            features: FeatureVector::from_array(a),
        });
    }
    Ok(FeatureMatrix {
        rows,
        conditioning: Conditioning::Raw,
    })
}

pub fn write_exclusions_jsonl(exclusions: &[Exclusion]) -> String {
    exclusions
        .iter()
        .map(|e| serde_json::to_string(e).expect("exclusion serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrv::CleanedBy;
    use proptest::prelude::*;

    fn nn_series(v: &[f64]) -> NNSeries {
        let mut t = 0.0;
        let times = v
            .iter()
            .map(|d| {
                let s = t;
                t += d;
                s
            })
            .collect();
        NNSeries {
            times,
            intervals: v.to_vec(),
            cleaned_by: CleanedBy::None,
        }
    }

    fn row(pid: &str, event: Event, phase: Phase, v: f64) -> FeatureRow {
        FeatureRow {
            key: RowKey {
                participant_id: pid.into(),
                event,
                phase,
            },
            features: FeatureVector::from_array([v; N_FEATURES]),
        }
    }

    fn complete_matrix(participants: usize) -> FeatureMatrix {
        let mut rows = Vec::new();
        for p in 0..participants {
            let mut t = 0.0;
            for e in Event::ALL {
                for ph in Phase::ALL {
                    rows.push((t, row(&format!("P{p:02}"), e, ph, t)));
                    t += 1.0;
                }
            }
        }
        assemble_matrix(rows).unwrap()
    }

    #[test]
    fn nn_time_domain_features() {
        let f = nn_features(&nn_series(&[0.8, 1.0, 0.8, 1.0]), &LombGrid::default()).unwrap();
        assert!((f[0] - 0.9).abs() < 1e-12);
        assert!((f[1] - 0.115_47).abs() < 1e-5);
        assert!((f[2] - 0.2).abs() < 1e-12);
        assert!((f[3] - 0.8).abs() < 1e-12);
        assert!((f[4] - 1.0).abs() < 1e-12);
        assert!(matches!(
            nn_features(&nn_series(&[0.8, 1.0, 0.8]), &LombGrid::default()),
            Err(FeatureError::Missing(_))
        ));
    }

    #[test]
    fn lf_modulation_dominates() {
        let mut v = Vec::new();
        let mut t = 0.0;
        while t < 300.0 {
            let d = 0.9 + 0.05 * (2.0 * std::f64::consts::PI * 0.1 * t).sin();
            v.push(d);
            t += d;
        }
        let f = nn_features(&nn_series(&v), &LombGrid::default()).unwrap();
        assert!(f[5] > 5.0 * f[6], "lfn {} hfn {}", f[5], f[6]);
        assert!(f[5] + f[6] <= 1.0);
    }

    #[test]
    fn unit_acc_magnitudes() {
        assert_eq!(acc_features(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (1.0, 0.0));
    }

    #[test]
    fn assembly_counts_and_duplicates() {
        assert_eq!(complete_matrix(46).len(), 690);
        assert!(assemble_matrix(vec![]).unwrap().is_empty());
        let dup = vec![
            (0.0, row("P1", Event::Alone, Phase::Pre, 0.0)),
            (1.0, row("P1", Event::Alone, Phase::Pre, 1.0)),
        ];
        assert!(matches!(assemble_matrix(dup), Err(FeatureError::Assembly(_))));
    }

    #[test]
    fn centering_subtracts_participant_median() {
        let m = assemble_matrix(vec![
            (0.0, row("P1", Event::Alone, Phase::Pre, 1.0)),
            (1.0, row("P1", Event::Alone, Phase::During, 2.0)),
            (2.0, row("P1", Event::Alone, Phase::Post, 4.0)),
            (0.0, row("P2", Event::Alone, Phase::Pre, 7.0)),
            (1.0, row("P2", Event::Alone, Phase::During, 7.0)),
        ])
        .unwrap();
        let c = condition_matrix(&m, true, false);
        assert_eq!(c.column(0), vec![-1.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(c.conditioning, Conditioning::Centered);
        assert_eq!(condition_matrix(&m, false, false).rows, m.rows);
        let s = condition_matrix(&m, false, true);
        assert_eq!(s.column(0), vec![1.0 / 1.5, 2.0 / 1.5, 4.0 / 1.5, 7.0, 7.0]);
    }

    #[test]
    fn correlations() {
        let mut rows = Vec::new();
        for (i, (x, y)) in [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)].into_iter().enumerate() {
            let mut a = [0.0; N_FEATURES];
            a[0] = x;
            a[1] = y;
            a[2] = 2.0 * x;
            rows.push((
                i as f64,
                FeatureRow {
                    key: RowKey {
                        participant_id: "P".into(),
                        event: Event::ALL[i],
                        phase: Phase::Pre,
                    },
                    features: FeatureVector::from_array(a),
                },
            ));
        }
        let c = correlation_matrix(&assemble_matrix(rows).unwrap()).unwrap();
        assert!(c.values[0][1].abs() < 1e-12);
        assert!((c.values[0][2] - 1.0).abs() < 1e-12);
        assert!(c.constant[3] && c.values[3][0] == 0.0);
        for i in 0..N_FEATURES {
            assert_eq!(c.values[i][i], 1.0);
            for j in 0..N_FEATURES {
                assert_eq!(c.values[i][j], c.values[j][i]);
            }
        }
        let one = assemble_matrix(vec![(0.0, row("P", Event::Alone, Phase::Pre, 1.0))]).unwrap();
        assert!(matches!(correlation_matrix(&one), Err(FeatureError::InsufficientData(_))));
    }

    #[test]
    fn task_row_counts() {
        let m = complete_matrix(1);
        let count = |t: Task| {
            let d = build_task(&m, t).unwrap();
            let ones = d.rows.iter().filter(|r| r.label == 1).count();
            (d.rows.len() - ones, ones)
        };
        assert_eq!(count(Task::AloneVsSocial), (1, 4));
        assert_eq!(count(Task::PreVsPost), (4, 4));
        assert_eq!(count(Task::DuringVsPrePost), (4, 8));
        assert_eq!(count(Task::DyadVsGroup), (2, 2));
        assert_eq!(count(Task::ImplicitVsExplicit), (2, 2));

        let no_groups = FeatureMatrix {
            rows: m
                .rows
                .iter()
                .filter(|r| r.key.event.size() != Some(crate::ingest::GroupSize::Group))
                .cloned()
                .collect(),
            conditioning: Conditioning::Raw,
        };
        assert!(matches!(
            build_task(&no_groups, Task::DyadVsGroup),
            Err(FeatureError::TaskConstruction(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut m = complete_matrix(2);
        m.rows[3].features.nn_lfn = 0.1 + 0.2;
        let text = write_matrix_csv(&m, Some("{\"seed\":1}"));
        let back = read_matrix_csv(text.as_bytes()).unwrap();
        assert_eq!(back.rows, m.rows);
        assert!(matches!(
            read_matrix_csv(b"participant_id,event\nP,alone\n"),
            Err(FeatureError::Table { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn centering_is_idempotent(vals in prop::collection::vec(-10.0f64..10.0, 15)) {
            let rows = vals.iter().enumerate().map(|(i, &v)| {
                (i as f64, row(&format!("P{}", i % 3), Event::ALL[i / 3], Phase::ALL[i % 3], v))
            }).collect();
            let m = assemble_matrix(rows).unwrap();
            let once = condition_matrix(&m, true, false);
            let twice = condition_matrix(&once, true, false);
            prop_assert_eq!(once.len(), m.len());
            for (a, b) in once.rows.iter().zip(&twice.rows) {
                prop_assert_eq!(&a.key, &b.key);
                for (x, y) in a.features.to_array().iter().zip(b.features.to_array()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn labels_follow_event_and_phase(p in 1usize..4) {
            let m = complete_matrix(p);
            for t in Task::ALL {
                let d = build_task(&m, t).unwrap();
                for r in &d.rows {
                    prop_assert_eq!(Some(r.label), t.label(r.key.event, r.key.phase));
                    prop_assert_eq!(&d.groups[r.group], &r.key.participant_id);
                }
            }
        }

        #[test]
        fn nn_features_are_order_free_and_shift_invariant(
            v in prop::collection::vec(0.4f64..1.5, 4..80),
            shift in -100.0f64..100.0,
        ) {
            let s = nn_series(&v);
            let grid = LombGrid::default();
            let a = nn_features(&s, &grid).unwrap();
            let mut shifted = s.clone();
            shifted.times.iter_mut().for_each(|t| *t += shift);
            let b = nn_features(&shifted, &grid).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
            }
            let mut rev = v.clone();
            rev.reverse();
            let c = nn_features(&nn_series(&rev), &grid).unwrap();
            for j in [0, 1, 3, 4] {
                prop_assert!((a[j] - c[j]).abs() < 1e-12);
            }
            prop_assert!(a[5] + a[6] <= 1.0 + 1e-12);
            prop_assert!(a[3] <= a[4]);
        }
    }
}
