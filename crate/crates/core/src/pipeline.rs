//! Study directories: one sub-directory per participant holding the four
//! channel exports and `timeline.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use thiserror::Error;

use crate::dsp::LombGrid;
use crate::features::{assemble_matrix, process_slice, Exclusion, ExtractConfig, FeatureMatrix, FeatureRow, ProcessedInterval};
use crate::hrv::NnCleaning;
use crate::ingest::{parse_stream, parse_timeline, slice_intervals, IngestError, SensorKind, SessionStreams, SessionTimeline};

pub const TIMELINE_FILE: &str = "timeline.csv";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: IngestError,
    },
    #[error("{0}")]
    Assembly(String),
}

fn read(path: &Path) -> Result<Vec<u8>, StudyError> {
    if !path.exists() {
        return Err(StudyError::Missing(path.to_path_buf()));
    }
    fs::read(path).map_err(|source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Participant directories in name order.
pub fn session_dirs(study: &Path) -> Result<Vec<PathBuf>, StudyError> {
    let io = |source| StudyError::Io {
        path: study.to_path_buf(),
        source,
    };
    if !study.is_dir() {
        return Err(StudyError::Missing(study.to_path_buf()));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(study).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_session(dir: &Path) -> Result<(SessionStreams, SessionTimeline), StudyError> {
    let tl_path = dir.join(TIMELINE_FILE);
    let timeline = parse_timeline(&read(&tl_path)?).map_err(|source| StudyError::Ingest { path: tl_path, source })?;
    let load = |kind: SensorKind| {
        let path = dir.join(kind.file_name());
        parse_stream(&read(&path)?, kind).map_err(|source| StudyError::Ingest { path, source })
    };
    let streams = SessionStreams {
        ppg: load(SensorKind::Ppg)?,
        acc: load(SensorKind::Acc)?,
        eda: load(SensorKind::Eda)?,
        tmp: load(SensorKind::Tmp)?,
    };
    Ok((streams, timeline))
}

/// Load, slice and run the signal stages for every interval of the study.
/// Sessions are processed in parallel; the output order is by participant
/// directory then timeline order.
pub fn process_study(study: &Path, cfg: &ExtractConfig) -> Result<Vec<ProcessedInterval>, StudyError> {
    let dirs = session_dirs(study)?;
    info!("processing {} session(s) in {}", dirs.len(), study.display());
    let per_session: Vec<Result<Vec<ProcessedInterval>, StudyError>> = dirs
        .par_iter()
        .map(|dir| {
            let (streams, timeline) = load_session(dir)?;
            let slices = slice_intervals(&streams, &timeline).map_err(|source| StudyError::Ingest {
                path: dir.join(TIMELINE_FILE),
                source,
            })?;
            debug!("{}: {} interval(s)", timeline.participant_id, slices.len());
            Ok(slices.iter().map(|s| process_slice(s, cfg)).collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_session {
        out.extend(r?);
    }
    Ok(out)
}

/// Feature rows for one NN cleaning method and window; intervals whose
/// features cannot be computed are returned as exclusions.
pub fn build_matrix(
    processed: &[ProcessedInterval],
    cleaning: &NnCleaning,
    window_s: Option<f64>,
    grid: &LombGrid,
) -> Result<(FeatureMatrix, Vec<Exclusion>), StudyError> {
    let results: Vec<_> = processed.par_iter().map(|p| p.features(cleaning, window_s, grid)).collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (p, r) in processed.iter().zip(results) {
        match r {
            Ok(features) => rows.push((p.start, FeatureRow { key: p.key(), features })),
            Err(e) => excluded.push(Exclusion {
                participant_id: p.participant_id.clone(),
                event: p.event,
                phase: p.phase,
                reason: e.to_string(),
            }),
        }
    }
    let m = assemble_matrix(rows).map_err(|e| StudyError::Assembly(e.to_string()))?;
    Ok((m, excluded))
}
