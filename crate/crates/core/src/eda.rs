//! Electrodermal activity: cleaning, tonic/phasic split and SCR peaks.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{DspError, Filter, FilterMode, FilterSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdaError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// How the "SCR Mean" feature is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrMeanMode {
    /// Mean of the phasic samples.
    #[default]
    Phasic,
    /// Mean amplitude of detected SCR peaks (0 when there are none).
    PeakAmplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdaConfig {
    pub clean_order: usize,
    pub clean_cutoff_hz: f64,
    pub tonic_cutoff_hz: f64,
    pub scr_threshold: f64,
    pub scr_min_separation_s: f64,
    pub scr_mean: ScrMeanMode,
}

impl Default for EdaConfig {
    fn default() -> Self {
        Self {
            clean_order: 4,
            clean_cutoff_hz: 3.0,
            tonic_cutoff_hz: 0.05,
            scr_threshold: 0.01,
            scr_min_separation_s: 1.0,
            scr_mean: ScrMeanMode::Phasic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdaDecomposition {
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScrPeaks {
    pub indices: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

impl ScrPeaks {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Lowpass the raw signal. A cutoff at or above Nyquist cannot be realised
/// and the signal is returned unchanged with a warning.
pub fn clean_eda(raw: &[f64], rate: f64, config: &EdaConfig) -> Result<Vec<f64>, EdaError> {
    if config.clean_cutoff_hz >= rate / 2.0 {
        debug!(
            "EDA lowpass at {} Hz is not below Nyquist for {} Hz sampling; skipping",
            config.clean_cutoff_hz, rate
        );
        return Ok(raw.to_vec());
    }
    let filter = Filter::new(FilterSpec::lowpass(config.clean_order, config.clean_cutoff_hz, rate))?;
    Ok(filter.apply(raw, FilterMode::ZeroPhase)?)
}

pub fn decompose_eda(filtered: &[f64], rate: f64) -> Result<EdaDecomposition, EdaError> {
    decompose_eda_with(filtered, rate, EdaConfig::default().tonic_cutoff_hz)
}

pub fn decompose_eda_with(filtered: &[f64], rate: f64, tonic_cutoff_hz: f64) -> Result<EdaDecomposition, EdaError> {
    if (filtered.len() as f64) < 3.0 * rate {
        return Err(EdaError::InsufficientData(format!(
            "{} EDA samples at {rate} Hz is under 3 s",
            filtered.len()
        )));
    }
    let filter = Filter::new(FilterSpec::lowpass(1, tonic_cutoff_hz, rate))?;
    let tonic = filter.apply(filtered, FilterMode::ZeroPhase)?;
    let phasic = filtered.iter().zip(&tonic).map(|(x, t)| x - t).collect();
    Ok(EdaDecomposition { tonic, phasic, rate })
}

pub fn detect_scr_peaks(phasic: &[f64], rate: f64) -> ScrPeaks {
    let c = EdaConfig::default();
    detect_scr_peaks_with(phasic, rate, c.scr_threshold, c.scr_min_separation_s)
}

/// Local maxima whose rise from the lowest point since the previous local
/// maximum is at least `threshold`. Troughs below zero count as zero: the
/// phasic component has a zero baseline, and the dip a zero-phase tonic
/// leaves between responses is not itself a response. Accepted peaks closer than
/// `min_separation_s` are merged, keeping the larger amplitude.
pub fn detect_scr_peaks_with(phasic: &[f64], rate: f64, threshold: f64, min_separation_s: f64) -> ScrPeaks {
    let mut out = ScrPeaks::default();
    let n = phasic.len();
    if n < 3 {
        return out;
    }
    let min_gap = (min_separation_s * rate).round() as usize;
    let mut trough = phasic[0];
    for i in 1..n - 1 {
        let x = phasic[i];
        if x > phasic[i - 1] && x >= phasic[i + 1] {
            let amp = x - trough.max(0.0);
            if amp >= threshold {
                match (out.indices.last(), out.amplitudes.last_mut()) {
                    (Some(&last), Some(last_amp)) if i - last < min_gap => {
                        if amp > *last_amp {
                            *last_amp = amp;
                            *out.indices.last_mut().unwrap() = i;
                        }
                    }
                    _ => {
                        out.indices.push(i);
                        out.amplitudes.push(amp);
                    }
                }
            }
            trough = phasic[i + 1];
        } else {
            trough = trough.min(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bateman(t: f64, amp: f64) -> f64 {
        let (tr, td) = (0.75f64, 2.0f64);
        if t <= 0.0 {
            return 0.0;
        }
        let tp = (td / tr).ln() * tr * td / (td - tr);
        let peak = (-tp / td).exp() - (-tp / tr).exp();
        amp * ((-t / td).exp() - (-t / tr).exp()) / peak
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn constant_is_all_tonic() {
        let d = decompose_eda(&[2.0; 400], 4.0).unwrap();
        assert!(d.tonic.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(d.phasic.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(matches!(decompose_eda(&[1.0; 11], 4.0), Err(EdaError::InsufficientData(_))));
    }

    #[test]
    fn ramp_stays_in_the_tonic() {
        let x: Vec<f64> = (0..480).map(|i| i as f64 / 479.0).collect();
        let d = decompose_eda(&x, 4.0).unwrap();
        assert!(rms(&d.phasic) < 0.05 * rms(&x), "{}", rms(&d.phasic) / rms(&x));
    }

    #[test]
    fn bumps_move_to_the_phasic_part() {
        let onsets = [20.0, 60.0, 95.0];
        let ramp: Vec<f64> = (0..480).map(|i| i as f64 / 479.0).collect();
        let x: Vec<f64> = ramp
            .iter()
            .enumerate()
            .map(|(i, r)| r + onsets.iter().map(|&o| bateman(i as f64 / 4.0 - o, 0.2)).sum::<f64>())
            .collect();
        let d = decompose_eda(&x, 4.0).unwrap();
        let err: Vec<f64> = d.tonic.iter().zip(&ramp).map(|(t, r)| t - r).collect();
        assert!(rms(&err) < 0.1 * rms(&ramp), "{}", rms(&err) / rms(&ramp));
        let p = detect_scr_peaks(&d.phasic, 4.0);
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn planted_scrs_are_counted() {
        let onsets = [15.0, 55.0, 90.0];
        let x: Vec<f64> = (0..480)
            .map(|i| 1.5 + onsets.iter().map(|&o| bateman(i as f64 / 4.0 - o, 0.5)).sum::<f64>())
            .collect();
        let d = decompose_eda(&x, 4.0).unwrap();
        let p = detect_scr_peaks(&d.phasic, 4.0);
        assert_eq!(p.len(), 3, "{p:?}");
        assert!((p.len() as f64 / 120.0 - 0.025).abs() < 1e-12);

        let tiny: Vec<f64> = (0..480).map(|i| 1.5 + bateman(i as f64 / 4.0 - 40.0, 0.005)).collect();
        let d = decompose_eda(&tiny, 4.0).unwrap();
        assert!(detect_scr_peaks(&d.phasic, 4.0).is_empty());
        assert!(detect_scr_peaks(&[0.0; 100], 4.0).is_empty());
    }

    #[test]
    fn cleaning_skips_unrealisable_cutoff() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(clean_eda(&x, 4.0, &EdaConfig::default()).unwrap(), x);
        let y: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let z = clean_eda(&y, 16.0, &EdaConfig::default()).unwrap();
        assert_eq!(z.len(), y.len());
    }

    proptest! {
        #[test]
        fn decomposition_is_exact_and_offset_free(
            x in prop::collection::vec(0.0f64..5.0, 12..200),
            c in -3.0f64..3.0,
        ) {
            let d = decompose_eda(&x, 4.0).unwrap();
            for ((t, p), v) in d.tonic.iter().zip(&d.phasic).zip(&x) {
                prop_assert!((t + p - v).abs() < 1e-9);
            }
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let e = decompose_eda(&shifted, 4.0).unwrap();
            for (a, b) in d.phasic.iter().zip(&e.phasic) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in d.tonic.iter().zip(&e.tonic) {
                prop_assert!((b - a - c).abs() < 1e-9);
            }
        }

        #[test]
        fn peak_count_falls_with_threshold(
            x in prop::collection::vec(-0.2f64..0.2, 3..200),
            lo in 0.0f64..0.1,
            extra in 0.0f64..0.2,
        ) {
            let a = detect_scr_peaks_with(&x, 4.0, lo, 1.0);
            let b = detect_scr_peaks_with(&x, 4.0, lo + extra, 1.0);
            prop_assert!(b.len() <= a.len());
            prop_assert!(a.amplitudes.iter().all(|&v| v >= lo));
            prop_assert!(a.indices.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
