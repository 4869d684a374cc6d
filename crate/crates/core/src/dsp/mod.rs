//! Signal-processing primitives shared by the PPG and EDA cleaning stages.
//!
//! * [`butterworth`]: Butterworth design as second-order sections, applied
//!   zero-phase (forward then backward) or causally.
//! * [`peaks`]: two-moving-average systolic peak detection for PPG.
//! * [`lomb`]: Lomb-Scargle periodogram on an evenly spaced frequency grid.

pub mod butterworth;
pub mod lomb;
pub mod peaks;

use thiserror::Error;

pub use butterworth::{butterworth_filter, Band, Filter, FilterMode, FilterSpec};
pub use lomb::{lomb_scargle_psd, LombGrid, Periodogram};
pub use peaks::{detect_systolic_peaks, detect_systolic_peaks_with, ElgendiParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    Spec(String),
    #[error("signal of {len} samples is too short for filtering (need more than {needed})")]
    TooShort { len: usize, needed: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
