//! NN interval series and the interval-cleaning filters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HrvError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("every NN interval was dropped by the {0:?} filter")]
    EmptyAfterCleaning(CleanedBy),
    #[error("invalid cleaning parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanedBy {
    None,
    Median,
    Automatic,
    Rules,
}

/// Cleaning method with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NnCleaning {
    None,
    /// Keep intervals inside `[lo, hi]` seconds.
    Rules { lo: f64, hi: f64 },
    /// Drop intervals deviating from the local neighbour mean by more than
    /// `cutoff` (a fraction).
    Automatic { cutoff: f64 },
    /// Drop intervals further than `tau` seconds from the centred rolling
    /// median over `window` intervals.
    Median { window: usize, tau: f64 },
}

impl NnCleaning {
    pub fn rules() -> Self {
        NnCleaning::Rules { lo: 0.33, hi: 1.5 }
    }

    pub fn automatic() -> Self {
        NnCleaning::Automatic { cutoff: 0.4 }
    }

    pub fn median() -> Self {
        NnCleaning::Median { window: 5, tau: 0.25 }
    }

    /// The four methods with default parameters.
    pub fn all_defaults() -> [NnCleaning; 4] {
        [NnCleaning::None, Self::median(), Self::automatic(), Self::rules()]
    }

    pub fn kind(&self) -> CleanedBy {
        match self {
            NnCleaning::None => CleanedBy::None,
            NnCleaning::Rules { .. } => CleanedBy::Rules,
            NnCleaning::Automatic { .. } => CleanedBy::Automatic,
            NnCleaning::Median { .. } => CleanedBy::Median,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind() {
            CleanedBy::None => "none",
            CleanedBy::Median => "median",
            CleanedBy::Automatic => "automatic",
            CleanedBy::Rules => "rules",
        }
    }

    /// Parse a method name, using default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "none" => Some(NnCleaning::None),
            "median" => Some(Self::median()),
            "automatic" => Some(Self::automatic()),
            "rules" => Some(Self::rules()),
            _ => None,
        }
    }
}

/// NN intervals with the time of each interval's opening beat.
///
/// Cleaning drops intervals without re-differencing, so `times[i]` is kept
/// per interval rather than per beat; before cleaning the beat times are
/// `times` followed by `times.last() + intervals.last()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NNSeries {
    /// Seconds relative to the interval start.
    pub times: Vec<f64>,
    /// Seconds.
    pub intervals: Vec<f64>,
    pub cleaned_by: CleanedBy,
}

impl NNSeries {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    fn keep(&self, mask: &[bool], by: CleanedBy) -> Result<NNSeries, HrvError> {
        let mut times = Vec::with_capacity(self.len());
        let mut intervals = Vec::with_capacity(self.len());
        for ((&t, &v), &k) in self.times.iter().zip(&self.intervals).zip(mask) {
            if k {
                times.push(t);
                intervals.push(v);
            }
        }
        if intervals.is_empty() {
            return Err(HrvError::EmptyAfterCleaning(by));
        }
        Ok(NNSeries {
            times,
            intervals,
            cleaned_by: by,
        })
    }

    /// Intervals whose opening beat falls before `window_s`.
    pub fn truncated(&self, window_s: f64) -> NNSeries {
        let n = self.times.partition_point(|&t| t < window_s);
        NNSeries {
            times: self.times[..n].to_vec(),
            intervals: self.intervals[..n].to_vec(),
            cleaned_by: self.cleaned_by,
        }
    }
}

pub fn nn_from_peaks(peaks: &[usize], rate: f64) -> Result<NNSeries, HrvError> {
    if peaks.len() < 2 {
        return Err(HrvError::InsufficientData(format!(
            "need at least 2 peaks, got {}",
            peaks.len()
        )));
    }
    if peaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HrvError::InvalidParams("peak indices must be strictly increasing".into()));
    }
    let beats: Vec<f64> = peaks.iter().map(|&p| p as f64 / rate).collect();
    Ok(NNSeries {
        times: beats[..beats.len() - 1].to_vec(),
        intervals: beats.windows(2).map(|w| w[1] - w[0]).collect(),
        cleaned_by: CleanedBy::None,
    })
}

pub fn clean_nn(nn: &NNSeries, method: &NnCleaning) -> Result<NNSeries, HrvError> {
    if nn.is_empty() {
        return Err(HrvError::InsufficientData("empty NN series".into()));
    }
    let x = &nn.intervals;
    let mask: Vec<bool> = match *method {
        NnCleaning::None => return Ok(nn.clone()),
        NnCleaning::Rules { lo, hi } => {
            if !(lo <= hi) {
                return Err(HrvError::InvalidParams(format!("rules bounds {lo} > {hi}")));
            }
            x.iter().map(|&v| (lo..=hi).contains(&v)).collect()
        }
        NnCleaning::Automatic { cutoff } => {
            if !(cutoff >= 0.0) {
                return Err(HrvError::InvalidParams(format!("negative cutoff {cutoff}")));
            }
            automatic_mask(x, cutoff)
        }
        NnCleaning::Median { window, tau } => {
            if window == 0 || !(tau >= 0.0) {
                return Err(HrvError::InvalidParams(format!("median window {window}, tau {tau}")));
            }
            let med = rolling_median(x, window);
            x.iter().zip(&med).map(|(v, m)| (v - m).abs() <= tau).collect()
        }
    };
    nn.keep(&mask, method.kind())
}

/// Each interval is compared with the mean of the last accepted interval
/// before it and the raw interval after it.
fn automatic_mask(x: &[f64], cutoff: f64) -> Vec<bool> {
    let mut mask = vec![true; x.len()];
    let mut prev: Option<f64> = None;
    for i in 0..x.len() {
        let next = x.get(i + 1).copied();
        let local = match (prev, next) {
            (Some(a), Some(b)) => Some(0.5 * (a + b)),
            (Some(a), None) | (None, Some(a)) => Some(a),
            (None, None) => None,
        };
        let ok = local.is_none_or(|m| (x[i] - m).abs() <= cutoff * m);
        mask[i] = ok;
        if ok {
            prev = Some(x[i]);
        }
    }
    mask
}

/// Centred rolling median; the window shrinks at the ends.
fn rolling_median(x: &[f64], window: usize) -> Vec<f64> {
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    let mut buf = Vec::with_capacity(window);
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi + 1).min(x.len());
            buf.clear();
            buf.extend_from_slice(&x[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}
