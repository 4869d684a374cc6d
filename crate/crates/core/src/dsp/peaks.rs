//! Systolic peak detection with two event-related moving averages.
//!
//! The bandpassed PPG is clipped at zero and squared. A short moving average
//! (about one systolic peak wide) is compared against a long one (about one
//! beat wide) plus an offset proportional to the mean squared signal. Runs
//! where the short average wins and that are at least one peak window wide
//! are candidate blocks; the largest filtered sample in each block is a peak.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElgendiParams {
    pub peak_window_s: f64,
    pub beat_window_s: f64,
    pub beat_offset: f64,
    pub refractory_s: f64,
}

impl Default for ElgendiParams {
    fn default() -> Self {
        Self {
            peak_window_s: 0.111,
            beat_window_s: 0.667,
            beat_offset: 0.02,
            refractory_s: 0.3,
        }
    }
}

/// Centred boxcar average; the signal is padded with its edge values.
fn moving_average(x: &[f64], size: usize) -> Vec<f64> {
    let n = x.len();
    let size = size.max(1);
    let half = (size - 1) / 2;
    // Window for output i covers padded indices i + half - (size - 1) ..= i + half.
    let lead = size - 1 - half;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let mut prefix = Vec::with_capacity(n + size + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for i in -(lead as isize)..(n + half) as isize {
        acc += at(i);
        prefix.push(acc);
    }
    (0..n)
        .map(|i| (prefix[i + size] - prefix[i]) / size as f64)
        .collect()
}

pub fn detect_systolic_peaks(filtered: &[f64], rate: f64) -> Vec<usize> {
    detect_systolic_peaks_with(filtered, rate, &ElgendiParams::default())
}

pub fn detect_systolic_peaks_with(filtered: &[f64], rate: f64, params: &ElgendiParams) -> Vec<usize> {
    if filtered.len() < 3 {
        return Vec::new();
    }
    let squared: Vec<f64> = filtered.iter().map(|v| v.max(0.0).powi(2)).collect();
    let mean_sq = squared.iter().sum::<f64>() / squared.len() as f64;
    if mean_sq == 0.0 {
        return Vec::new();
    }
    let peak_win = ((params.peak_window_s * rate).round() as usize).max(1);
    let beat_win = ((params.beat_window_s * rate).round() as usize).max(1);
    let refractory = (params.refractory_s * rate).round() as usize;

    let ma_peak = moving_average(&squared, peak_win);
    let ma_beat = moving_average(&squared, beat_win);
    let offset = params.beat_offset * mean_sq;

    let mut peaks: Vec<usize> = Vec::new();
    let mut i = 0;
    let n = filtered.len();
    while i < n {
        if ma_peak[i] <= ma_beat[i] + offset {
            i += 1;
            continue;
        }
        let begin = i;
        while i < n && ma_peak[i] > ma_beat[i] + offset {
            i += 1;
        }
        if i - begin < peak_win {
            continue;
        }
        let mut best = begin;
        for j in begin..i {
            if filtered[j] > filtered[best] {
                best = j;
            }
        }
        match peaks.last_mut() {
            Some(last) if best - *last < refractory => {
                if filtered[best] > filtered[*last] {
                    *last = best;
                }
            }
            _ => peaks.push(best),
        }
    }
    peaks
}
