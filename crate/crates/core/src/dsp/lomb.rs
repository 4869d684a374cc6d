//! Lomb-Scargle periodogram for unevenly sampled series.
//!
//! Power uses the classical time-offset form,
//! `P(w) = 1/2 [ (sum y cos w(t-tau))^2 / sum cos^2 w(t-tau) + (sum y sin w(t-tau))^2 / sum sin^2 w(t-tau) ]`
//! on mean-centred values, so it scales with the square of the amplitude.
//! The frequency grid is evenly spaced, which lets the per-sample phasors be
//! advanced by rotation instead of calling `sin`/`cos` for every grid point.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LombGrid {
    pub fmin: f64,
    pub fmax: f64,
    pub n_freqs: usize,
}

impl Default for LombGrid {
    fn default() -> Self {
        Self {
            fmin: 0.01,
            fmax: 0.5,
            n_freqs: 491,
        }
    }
}

impl LombGrid {
    pub fn step(&self) -> f64 {
        (self.fmax - self.fmin) / (self.n_freqs - 1) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.n_freqs).map(|i| self.fmin + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Periodogram {
    pub fn argmax_freq(&self) -> Option<f64> {
        self.power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.freqs[i])
    }

    /// Trapezoidal integral of power over grid points inside `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let eps = 1e-9;
        let mut total = 0.0;
        for i in 1..self.freqs.len() {
            let (f0, f1) = (self.freqs[i - 1], self.freqs[i]);
            if f0 >= lo - eps && f1 <= hi + eps {
                total += 0.5 * (self.power[i - 1] + self.power[i]) * (f1 - f0);
            }
        }
        total
    }

    pub fn total_power(&self) -> f64 {
        match (self.freqs.first(), self.freqs.last()) {
            (Some(&lo), Some(&hi)) => self.band_power(lo, hi),
            _ => 0.0,
        }
    }
}

pub fn lomb_scargle_psd(
    times: &[f64],
    values: &[f64],
    fmin: f64,
    fmax: f64,
    n_freqs: usize,
) -> Result<Periodogram, DspError> {
    if times.len() != values.len() {
        return Err(DspError::InvalidInput(format!(
            "times ({}) and values ({}) differ in length",
            times.len(),
            values.len()
        )));
    }
    if times.len() < 4 {
        return Err(DspError::InsufficientData(format!(
            "Lomb-Scargle needs at least 4 samples, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DspError::InvalidInput("times must be strictly increasing".into()));
    }
    if !(fmin > 0.0 && fmax > fmin && n_freqs >= 2) {
        return Err(DspError::InvalidInput(format!(
            "bad frequency grid fmin={fmin} fmax={fmax} n={n_freqs}"
        )));
    }
    let grid = LombGrid { fmin, fmax, n_freqs };
    let freqs = grid.frequencies();

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let scale = centred.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || scale <= 1e-12 * mean.abs() {
        return Ok(Periodogram {
            power: vec![0.0; n_freqs],
            freqs,
        });
    }

    // Accumulators per frequency: sum y cos wt, sum y sin wt, sum cos 2wt, sum sin 2wt.
    let mut yc = vec![0.0; n_freqs];
    let mut ys = vec![0.0; n_freqs];
    let mut c2 = vec![0.0; n_freqs];
    let mut s2 = vec![0.0; n_freqs];
    let dw = 2.0 * PI * grid.step();
    let w0 = 2.0 * PI * fmin;
    // Offset times so the rotation stays well conditioned for epoch timestamps.
    let t0 = times[0];
    for (&t, &y) in times.iter().zip(&centred) {
        let t = t - t0;
        let (mut s, mut c) = (w0 * t).sin_cos();
        let (ds, dc) = (dw * t).sin_cos();
        for k in 0..n_freqs {
            yc[k] += y * c;
            ys[k] += y * s;
            c2[k] += c * c - s * s;
            s2[k] += 2.0 * s * c;
            let next_c = c * dc - s * ds;
            s = s * dc + c * ds;
            c = next_c;
        }
    }

    let power = (0..n_freqs)
        .map(|k| {
            // tan(2 w tau) = S2 / C2
            let two_wtau = s2[k].atan2(c2[k]);
            let (sin2, cos2) = two_wtau.sin_cos();
            let (sin1, cos1) = (0.5 * two_wtau).sin_cos();
            let cc = 0.5 * (n + cos2 * c2[k] + sin2 * s2[k]);
            let ss = n - cc;
            let a = cos1 * yc[k] + sin1 * ys[k];
            let b = cos1 * ys[k] - sin1 * yc[k];
            let mut p = 0.0;
            if cc > 1e-12 * n {
                p += a * a / cc;
            }
            if ss > 1e-12 * n {
                p += b * b / ss;
            }
            (0.5 * p).max(0.0)
        })
        .collect();

    Ok(Periodogram { freqs, power })
}
