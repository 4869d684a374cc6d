//! C interface to ctxsense.
//!
//! Every fallible function returns a `CtxStatus`; on failure a message is
//! available from `ctxsense_last_error` on the same thread until the next
//! call. Feature matrices are opaque handles released with
//! `ctxsense_matrix_free`. Strings returned through `char **` out
//! parameters are owned by the caller and released with
//! `ctxsense_string_free`. Configuration arguments are optional JSON
//! documents merged over the defaults; pass NULL for the defaults.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use ctxsense::features::{read_matrix_csv, write_matrix_csv, FeatureMatrix, Task, FEATURE_NAMES, N_FEATURES};
use ctxsense::run::{self, Provenance, RunConfig, RunError};
use ctxsense::synth::write_study;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InsufficientData = 4,
    Internal = 5,
}

/// Opaque feature table: one row per interval, 13 features per row.
pub struct CtxFeatureMatrix {
    inner: FeatureMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CtxStatus, String);

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::Usage(_) => CtxStatus::InvalidArgument,
            RunError::Parse(_) => CtxStatus::Parse,
            RunError::InsufficientData(_) => CtxStatus::InsufficientData,
            RunError::Internal(_) => CtxStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtxStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            CtxStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CtxStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CtxStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn matrix_arg<'a>(m: *const CtxFeatureMatrix) -> Result<&'a FeatureMatrix, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("matrix"))
}

unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Failure> {
    let cfg = if p.is_null() {
        RunConfig::default()
    } else {
        RunConfig::from_json_patch(str_arg(p, "config")?)?
    };
    let seed = cfg.seed;
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn task_arg(s: &str) -> Result<Task, Failure> {
    s.parse().map_err(|e: String| Failure(CtxStatus::InvalidArgument, e))
}

unsafe fn put_matrix(out: *mut *mut CtxFeatureMatrix, m: FeatureMatrix) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(CtxFeatureMatrix { inner: m }));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|e| Failure(CtxStatus::Internal, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctxsense_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next ctxsense call on the same thread.
#[no_mangle]
pub extern "C" fn ctxsense_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ctxsense_feature_count() -> usize {
    N_FEATURES
}

/// Static name of feature `index`, or NULL when out of range.
#[no_mangle]
pub extern "C" fn ctxsense_feature_name(index: usize) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| FEATURE_NAMES.iter().map(|n| CString::new(*n).unwrap()).collect());
    names.get(index).map_or(ptr::null(), |c| c.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn ctxsense_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_free(m: *mut CtxFeatureMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Parse a feature table from CSV text.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_parse_csv(text: *const c_char, out: *mut *mut CtxFeatureMatrix) -> CtxStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let m = read_matrix_csv(text.as_bytes()).map_err(|e| Failure(CtxStatus::Parse, e.to_string()))?;
        put_matrix(out, m)
    })
}

/// Read a feature table written by `ctxsense extract`.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_read_csv(path: *const c_char, out: *mut *mut CtxFeatureMatrix) -> CtxStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(CtxStatus::InvalidArgument, format!("{path}: {e}")))?;
        let m = read_matrix_csv(&bytes).map_err(|e| Failure(CtxStatus::Parse, format!("{path}: {e}")))?;
        put_matrix(out, m)
    })
}

/// Extract the feature table from a study directory.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_extract_study(
    study_dir: *const c_char,
    config_json: *const c_char,
    out: *mut *mut CtxFeatureMatrix,
) -> CtxStatus {
    guard(|| {
        let dir = str_arg(study_dir, "study_dir")?;
        let cfg = config_arg(config_json)?;
        let extracted = run::extract(Path::new(dir), &cfg)?;
        put_matrix(out, extracted.matrix)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_rows(m: *const CtxFeatureMatrix, out: *mut usize) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.len();
        Ok(())
    })
}

/// Copy all values row-major into `buf`, which must hold at least
/// rows * 13 doubles.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_values(m: *const CtxFeatureMatrix, buf: *mut f64, len: usize) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = m.len() * N_FEATURES;
        if len < need {
            return Err(Failure(CtxStatus::InvalidArgument, format!("buffer holds {len} values, {need} needed")));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (chunk, row) in out.chunks_exact_mut(N_FEATURES).zip(&m.rows) {
            chunk.copy_from_slice(&row.features.to_array());
        }
        Ok(())
    })
}

/// Row key as "participant/event/phase".
#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_row_key(
    m: *const CtxFeatureMatrix,
    row: usize,
    out: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        let r = m
            .rows
            .get(row)
            .ok_or_else(|| Failure(CtxStatus::InvalidArgument, format!("row {row} out of range")))?;
        put_string(out, r.key.to_string())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ctxsense_matrix_to_csv(m: *const CtxFeatureMatrix, out: *mut *mut c_char) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        put_string(out, write_matrix_csv(m, None))
    })
}

/// Univariate tests, k-best curve and importances for one task, as JSON.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_analyze_task(
    m: *const CtxFeatureMatrix,
    task: *const c_char,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        let task = task_arg(str_arg(task, "task")?)?;
        let cfg = config_arg(config_json)?;
        let report = run::analyze_task(m, task, &cfg)?;
        put_string(out_json, Provenance::new(&format!("analyze {task}"), &[], &cfg).json(&report))
    })
}

/// HDBSCAN on a task's conditioned rows using the `k` best features;
/// `k = 0` picks the task default.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_cluster_task(
    m: *const CtxFeatureMatrix,
    task: *const c_char,
    k: usize,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        let task = task_arg(str_arg(task, "task")?)?;
        let cfg = config_arg(config_json)?;
        let k = (k > 0).then_some(k);
        let out = run::cluster_task(m, task, None, k, &cfg.cluster, &cfg)?;
        put_string(out_json, Provenance::new(&format!("cluster {task}"), &[], &cfg).json(&out))
    })
}

/// The four centring/scaling combinations over all five tasks, as JSON.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_conditioning_benchmark(
    m: *const CtxFeatureMatrix,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CtxStatus {
    guard(|| {
        let m = matrix_arg(m)?;
        let cfg = config_arg(config_json)?;
        let rows = run::conditioning(m, &Task::ALL, &cfg)?;
        put_string(out_json, Provenance::new("bench conditioning", &[], &cfg).json(&rows))
    })
}

/// Write a synthetic study described by the `synth` section of the config.
#[no_mangle]
pub unsafe extern "C" fn ctxsense_synth_study(out_dir: *const c_char, config_json: *const c_char) -> CtxStatus {
    guard(|| {
        let dir = str_arg(out_dir, "out_dir")?;
        let cfg = config_arg(config_json)?;
        cfg.synth.validate().map_err(RunError::from)?;
        write_study(&cfg.synth, Path::new(dir)).map_err(RunError::from)?;
        Ok(())
    })
}
