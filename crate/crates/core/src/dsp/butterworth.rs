//! Digital Butterworth filters realized as cascaded biquads.
//!
//! Design goes analog prototype -> frequency transform -> bilinear transform
//! (with prewarping), then poles are paired into second-order sections. Each
//! section is normalized to unit gain at the reference frequency (DC for
//! lowpass, the geometric band centre for bandpass).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Band {
    Bandpass { low_hz: f64, high_hz: f64 },
    Lowpass { high_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub band: Band,
    pub rate: f64,
}

impl FilterSpec {
    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, rate: f64) -> Self {
        Self {
            order,
            band: Band::Bandpass { low_hz, high_hz },
            rate,
        }
    }

    pub fn lowpass(order: usize, high_hz: f64, rate: f64) -> Self {
        Self {
            order,
            band: Band::Lowpass { high_hz },
            rate,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.order == 0 {
            return Err(DspError::Spec("order must be positive".into()));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(DspError::Spec(format!("invalid sample rate {}", self.rate)));
        }
        let nyquist = self.rate / 2.0;
        match self.band {
            Band::Bandpass { low_hz, high_hz } => {
                if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
                    return Err(DspError::Spec(format!(
                        "bandpass needs 0 < low < high < rate/2, got low={low_hz} high={high_hz} rate={}",
                        self.rate
                    )));
                }
            }
            Band::Lowpass { high_hz } => {
                if !(high_hz > 0.0 && high_hz < nyquist) {
                    return Err(DspError::Spec(format!(
                        "lowpass needs 0 < high < rate/2, got high={high_hz} rate={}",
                        self.rate
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Forward then backward; effective magnitude is the squared single-pass response.
    #[default]
    ZeroPhase,
    Causal,
}

/// One second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = self.a[0] + self.a[1] * z1 + self.a[2] * z2;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Direct-form II transposed state after settling on a unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// A designed filter: cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    spec: FilterSpec,
    sections: Vec<Biquad>,
}

impl Filter {
    pub fn new(spec: FilterSpec) -> Result<Self, DspError> {
        spec.validate()?;
        let fs = spec.rate;
        let prewarp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let n = spec.order;

        // Analog lowpass prototype poles with unit cutoff.
        let proto: Vec<Complex64> = (0..n)
            .map(|k| {
                let m = -(n as f64) + 1.0 + 2.0 * k as f64;
                -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64))
            })
            .collect();

        let (analog_poles, reference_omega) = match spec.band {
            Band::Lowpass { high_hz } => {
                let wc = prewarp(high_hz);
                (proto.iter().map(|p| p * wc).collect::<Vec<_>>(), 0.0)
            }
            Band::Bandpass { low_hz, high_hz } => {
                let wl = prewarp(low_hz);
                let wh = prewarp(high_hz);
                let bw = wh - wl;
                let w0 = (wl * wh).sqrt();
                let mut poles = Vec::with_capacity(2 * n);
                for p in &proto {
                    let half = p * (bw / 2.0);
                    let disc = (half * half - w0 * w0).sqrt();
                    poles.push(half + disc);
                    poles.push(half - disc);
                }
                (poles, 2.0 * (w0 / (2.0 * fs)).atan())
            }
        };

        let two_fs = Complex64::new(2.0 * fs, 0.0);
        let digital: Vec<Complex64> = analog_poles
            .iter()
            .map(|s| (two_fs + s) / (two_fs - s))
            .collect();

        let sections = pair_sections(&digital, spec.band)
            .into_iter()
            .map(|mut sec| {
                let gain = sec.response(reference_omega).norm();
                for b in &mut sec.b {
                    *b /= gain;
                }
                sec
            })
            .collect();

        Ok(Self { spec, sections })
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.spec.rate;
        self.sections
            .iter()
            .map(|s| s.response(omega).norm())
            .product()
    }

    /// Padding used by the forward-backward pass (odd extension at both ends).
    pub fn pad_len(&self) -> usize {
        let trailing_b = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let trailing_a = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        3 * (2 * self.sections.len() + 1 - trailing_b.min(trailing_a))
    }

    pub fn apply(&self, signal: &[f64], mode: FilterMode) -> Result<Vec<f64>, DspError> {
        match mode {
            FilterMode::Causal => {
                if signal.is_empty() {
                    return Err(DspError::TooShort { len: 0, needed: 0 });
                }
                let mut state = vec![[0.0; 2]; self.sections.len()];
                Ok(self.run(signal.iter().copied(), &mut state))
            }
            FilterMode::ZeroPhase => self.filtfilt(signal),
        }
    }

    fn initial_state(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut scale = x0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let st = [z1 * scale, z2 * scale];
                scale *= s.dc_gain();
                st
            })
            .collect()
    }

    fn run(&self, input: impl Iterator<Item = f64>, state: &mut [[f64; 2]]) -> Vec<f64> {
        let mut out = Vec::with_capacity(input.size_hint().0);
        for x in input {
            let mut v = x;
            for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                let y = s.b[0] * v + z[0];
                z[0] = s.b[1] * v - s.a[1] * y + z[1];
                z[1] = s.b[2] * v - s.a[2] * y;
                v = y;
            }
            out.push(v);
        }
        out
    }

    fn filtfilt(&self, signal: &[f64]) -> Result<Vec<f64>, DspError> {
        let pad = self.pad_len();
        let n = signal.len();
        if n <= pad {
            return Err(DspError::TooShort { len: n, needed: pad });
        }
        let first = signal[0];
        let last = signal[n - 1];
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

        let mut state = self.initial_state(ext[0]);
        let mut fwd = self.run(ext.iter().copied(), &mut state);
        fwd.reverse();
        let mut state = self.initial_state(fwd[0]);
        let mut back = self.run(fwd.iter().copied(), &mut state);
        back.reverse();
        Ok(back[pad..pad + n].to_vec())
    }
}

fn pair_sections(poles: &[Complex64], band: Band) -> Vec<Biquad> {
    let tol = 1e-10;
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    real.sort_by(|a, b| a.total_cmp(b));
    let mut upper: Vec<Complex64> = poles.iter().filter(|p| p.im > tol).copied().collect();
    upper.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let numerator = |first_order: bool| match band {
        Band::Lowpass { .. } if first_order => [1.0, 1.0, 0.0],
        Band::Lowpass { .. } => [1.0, 2.0, 1.0],
        Band::Bandpass { .. } => [1.0, 0.0, -1.0],
    };

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: numerator(false),
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        match *pair {
            [r1, r2] => sections.push(Biquad {
                b: numerator(false),
                a: [1.0, -(r1 + r2), r1 * r2],
            }),
            [r] => sections.push(Biquad {
                b: numerator(true),
                a: [1.0, -r, 0.0],
            }),
            _ => unreachable!(),
        }
    }
    sections
}

/// Zero-phase Butterworth filtering.
pub fn butterworth_filter(signal: &[f64], spec: &FilterSpec) -> Result<Vec<f64>, DspError> {
    Filter::new(*spec)?.apply(signal, FilterMode::ZeroPhase)
}
