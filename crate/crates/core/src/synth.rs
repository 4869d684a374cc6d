//! Seeded synthetic sessions with ground truth, written in the export
//! formats read by `ingest`, plus a feature-space generator for fast
//! learning and clustering checks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureRow, FeatureVector, RowKey, Task, N_FEATURES};
use crate::ingest::{
    write_stream, write_timeline, Event, Phase, Samples, SensorKind, SensorStream, SessionEvent, SessionStreams,
    SessionTimeline,
};
use crate::numeric::{derive_seed, mean, sample_sd};
use crate::pipeline::TIMELINE_FILE;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Physiology of one (context, phase) state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    pub hr_bpm: f64,
    /// Amplitude of the low-frequency NN modulation, seconds.
    pub lf_amp_s: f64,
    /// Amplitude of the high-frequency NN modulation, seconds.
    pub hf_amp_s: f64,
    pub scr_per_min: f64,
    /// Per-axis accelerometer jitter, g.
    pub acc_sd_g: f64,
    pub temp_c: f64,
}

impl Default for StateParams {
    fn default() -> Self {
        Self {
            hr_bpm: 70.0,
            lf_amp_s: 0.03,
            hf_amp_s: 0.02,
            scr_per_min: 2.0,
            acc_sd_g: 0.03,
            temp_c: 33.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StateDelta {
    pub hr_bpm: f64,
    pub lf_amp_s: f64,
    pub hf_amp_s: f64,
    pub scr_per_min: f64,
    pub acc_sd_g: f64,
    pub temp_c: f64,
}

impl StateParams {
    fn add(mut self, d: &StateDelta) -> Self {
        self.hr_bpm += d.hr_bpm;
        self.lf_amp_s += d.lf_amp_s;
        self.hf_amp_s += d.hf_amp_s;
        self.scr_per_min += d.scr_per_min;
        self.acc_sd_g += d.acc_sd_g;
        self.temp_c += d.temp_c;
        self
    }

    fn sanitised(mut self) -> Self {
        self.hr_bpm = self.hr_bpm.clamp(35.0, 180.0);
        self.lf_amp_s = self.lf_amp_s.max(0.0);
        self.hf_amp_s = self.hf_amp_s.max(0.0);
        self.scr_per_min = self.scr_per_min.max(0.0);
        self.acc_sd_g = self.acc_sd_g.max(0.0);
        self
    }
}

/// Additive effects; a social during interval of a group explicit event
/// receives `social + during + group + explicit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Effects {
    pub social: StateDelta,
    pub during: StateDelta,
    pub post: StateDelta,
    pub group: StateDelta,
    pub explicit: StateDelta,
}

impl Default for Effects {
    fn default() -> Self {
        Self {
            social: StateDelta { hr_bpm: 4.0, scr_per_min: 1.5, ..StateDelta::default() },
            during: StateDelta { hr_bpm: 3.0, acc_sd_g: 0.01, hf_amp_s: -0.005, ..StateDelta::default() },
            post: StateDelta { hr_bpm: -1.0, scr_per_min: -0.5, ..StateDelta::default() },
            group: StateDelta { hr_bpm: 1.0, scr_per_min: 0.5, ..StateDelta::default() },
            explicit: StateDelta { scr_per_min: 0.5, ..StateDelta::default() },
        }
    }
}

/// Between-participant standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Spread {
    pub hr_bpm: f64,
    pub scl_us: f64,
    pub temp_c: f64,
    pub acc_sd_g: f64,
    /// Log-scale SD of a multiplier on both modulation amplitudes.
    pub hrv_log: f64,
}

impl Default for Spread {
    fn default() -> Self {
        Self {
            hr_bpm: 6.0,
            scl_us: 1.5,
            temp_c: 0.8,
            acc_sd_g: 0.005,
            hrv_log: 0.2,
        }
    }
}

/// Response archetypes in during intervals, laid out on a square grid of
/// (heart rate, SCR rate) offsets. Alone archetypes take the first grid
/// cells, social archetypes the following ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub alone: usize,
    pub social: usize,
    pub hr_step_bpm: f64,
    pub scr_step_per_min: f64,
}

fn grid_cell(index: usize, total: usize) -> (f64, f64) {
    let cols = (total as f64).sqrt().ceil().max(1.0) as usize;
    ((index % cols) as f64, (index / cols) as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "missing")]
pub enum Completeness {
    /// All five events for every participant.
    #[default]
    Complete,
    /// 14 participants miss one social event and 9 miss two, leaving
    /// 594 intervals for 46 participants.
    Paper594,
    /// Social events omitted per participant (missing entries mean none).
    Explicit(Vec<Vec<Event>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Complete,
    Paper594,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complete" => Ok(Preset::Complete),
            "paper594" => Ok(Preset::Paper594),
            _ => Err(format!("unknown preset {s:?} (expected complete or paper594)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Complete => "complete",
            Preset::Paper594 => "paper594",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participants: usize,
    pub completeness: Completeness,
    pub baseline: StateParams,
    pub effects: Effects,
    pub spread: Spread,
    pub archetypes: Option<ArchetypeSpec>,
    /// Saturation bursts per minute of PPG, uniform over the session.
    pub artifact_rate_per_min: f64,
    pub artifact_duration_s: f64,
    pub lf_hz: f64,
    pub hf_hz: f64,
    /// Beat-to-beat Gaussian jitter of NN intervals, seconds.
    pub nn_jitter_s: f64,
    pub ppg_noise: f64,
    pub pre_s: f64,
    pub post_s: f64,
    /// Pause between events, seconds.
    pub gap_s: f64,
    /// Recording margin before the first and after the last interval.
    pub margin_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            participants: 46,
            completeness: Completeness::Complete,
            baseline: StateParams::default(),
            effects: Effects::default(),
            spread: Spread::default(),
            archetypes: None,
            artifact_rate_per_min: 0.0,
            artifact_duration_s: 0.5,
            lf_hz: 0.1,
            hf_hz: 0.25,
            nn_jitter_s: 0.01,
            ppg_noise: 0.5,
            pre_s: 120.0,
            post_s: 120.0,
            gap_s: 30.0,
            margin_s: 20.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let completeness = match preset {
            Preset::Complete => Completeness::Complete,
            Preset::Paper594 => Completeness::Paper594,
        };
        Self {
            completeness,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.participants == 0 {
            return bad("at least one participant is needed");
        }
        let positive = [
            self.pre_s,
            self.post_s,
            self.artifact_duration_s,
            self.lf_hz,
            self.hf_hz,
            self.baseline.hr_bpm,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("durations, modulation frequencies and heart rate must be positive");
        }
        let non_negative = [
            self.gap_s,
            self.margin_s,
            self.artifact_rate_per_min,
            self.nn_jitter_s,
            self.ppg_noise,
            self.spread.hr_bpm,
            self.spread.scl_us,
            self.spread.temp_c,
            self.spread.acc_sd_g,
            self.spread.hrv_log,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("rates, noise levels and spreads must be non-negative");
        }
        if self.completeness == Completeness::Paper594 && self.participants != 46 {
            return bad("the paper594 completeness pattern needs exactly 46 participants");
        }
        if let Completeness::Explicit(m) = &self.completeness {
            if m.len() > self.participants {
                return bad("more completeness entries than participants");
            }
            if m.iter().flatten().any(|e| *e == Event::Alone) {
                return bad("the alone event cannot be omitted");
            }
        }
        if let Some(a) = &self.archetypes {
            if a.alone + a.social == 0 {
                return bad("archetype spec with no archetypes");
            }
        }
        Ok(())
    }

    /// Social events omitted for each participant.
    pub fn omitted_events(&self) -> Vec<Vec<Event>> {
        match &self.completeness {
            Completeness::Complete => vec![Vec::new(); self.participants],
            Completeness::Explicit(m) => {
                let mut out = m.clone();
                out.resize(self.participants, Vec::new());
                out
            }
            Completeness::Paper594 => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0xC0_FFEE));
                let mut who: Vec<usize> = (0..self.participants).collect();
                who.shuffle(&mut rng);
                let mut out = vec![Vec::new(); self.participants];
                for (rank, &p) in who.iter().take(23).enumerate() {
                    let mut social = Event::SOCIAL.to_vec();
                    social.shuffle(&mut rng);
                    social.truncate(if rank < 14 { 1 } else { 2 });
                    social.sort();
                    out[p] = social;
                }
                out
            }
        }
    }

    pub fn expected_intervals(&self) -> usize {
        self.omitted_events().iter().map(|m| 3 * (Event::ALL.len() - m.len())).sum()
    }

    fn during_s(&self, event: Event) -> f64 {
        event.during_duration_s()
    }
}

pub fn participant_id(index: usize) -> String {
    format!("P{:02}", index + 1)
}

/// Ground truth of one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTruth {
    pub participant_id: String,
    pub event: Event,
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
    pub hr_bpm: f64,
    /// NN intervals between consecutive planted beats inside the interval.
    pub nn: Vec<f64>,
    pub beat_times: Vec<f64>,
    pub scr_onsets: Vec<f64>,
    pub scr_amplitudes: Vec<f64>,
    /// SD of the emitted accelerometer magnitude.
    pub acc_sd: f64,
    pub archetype: Option<usize>,
    pub artifacts: usize,
    /// Task token to label for the tasks this interval belongs to.
    pub labels: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub participants: Vec<String>,
    pub intervals: Vec<IntervalTruth>,
}

struct Traits {
    hr_offset: f64,
    hrv_scale: f64,
    scl: f64,
    temp_offset: f64,
    acc_offset: f64,
    lf_phase: f64,
    hf_phase: f64,
}

/// An interval in the plan with its physiology.
struct Planned {
    entry: SessionEvent,
    state: StateParams,
    archetype: Option<usize>,
}

struct Plan {
    pid: String,
    traits: Traits,
    gap_state: StateParams,
    intervals: Vec<Planned>,
    t0: f64,
    t_end: f64,
}

fn plan_session(cfg: &SynthConfig, index: usize, omitted: &[Event]) -> Plan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, index as u64), 0));
    let std = |sd: f64, rng: &mut ChaCha8Rng| if sd > 0.0 { Normal::new(0.0, sd).unwrap().sample(rng) } else { 0.0 };
    let traits = Traits {
        hr_offset: std(cfg.spread.hr_bpm, &mut rng),
        hrv_scale: std(cfg.spread.hrv_log, &mut rng).exp(),
        scl: (5.0 + std(cfg.spread.scl_us, &mut rng)).max(0.5),
        temp_offset: std(cfg.spread.temp_c, &mut rng),
        acc_offset: std(cfg.spread.acc_sd_g, &mut rng),
        lf_phase: rng.random_range(0.0..2.0 * PI),
        hf_phase: rng.random_range(0.0..2.0 * PI),
    };
    let personal = |s: StateParams| {
        StateParams {
            hr_bpm: s.hr_bpm + traits.hr_offset,
            lf_amp_s: s.lf_amp_s * traits.hrv_scale,
            hf_amp_s: s.hf_amp_s * traits.hrv_scale,
            acc_sd_g: s.acc_sd_g + traits.acc_offset,
            temp_c: s.temp_c + traits.temp_offset,
            ..s
        }
        .sanitised()
    };

    let mut social: Vec<Event> = Event::SOCIAL.into_iter().filter(|e| !omitted.contains(e)).collect();
    social.shuffle(&mut rng);
    let order: Vec<Event> = std::iter::once(Event::Alone).chain(social).collect();

    let t0 = 1_600_000_000.0 + 86_400.0 * index as f64;
    let mut t = t0 + cfg.margin_s;
    let mut intervals = Vec::new();
    for (k, &event) in order.iter().enumerate() {
        if k > 0 {
            t += cfg.gap_s;
        }
        let archetype = cfg.archetypes.map(|a| {
            if event == Event::Alone || a.social == 0 {
                rng.random_range(0..a.alone.max(1))
            } else {
                a.alone + rng.random_range(0..a.social)
            }
        });
        for phase in Phase::ALL {
            let d = match phase {
                Phase::Pre => cfg.pre_s,
                Phase::During => cfg.during_s(event),
                Phase::Post => cfg.post_s,
            };
            let e = &cfg.effects;
            let mut s = cfg.baseline;
            if event != Event::Alone {
                s = s.add(&e.social);
                if event.size() == Some(crate::ingest::GroupSize::Group) {
                    s = s.add(&e.group);
                }
                if event.threat() == Some(crate::ingest::Threat::Explicit) {
                    s = s.add(&e.explicit);
                }
            }
            match phase {
                Phase::During => s = s.add(&e.during),
                Phase::Post => s = s.add(&e.post),
                Phase::Pre => {}
            }
            let mut arch = None;
            if let (Some(a), Some(id), Phase::During) = (cfg.archetypes, archetype, phase) {
                let (gx, gy) = grid_cell(id, a.alone + a.social);
                s.hr_bpm += gx * a.hr_step_bpm;
                s.scr_per_min += gy * a.scr_step_per_min;
                arch = Some(id);
            }
            intervals.push(Planned {
                entry: SessionEvent { event, phase, start: t, end: t + d },
                state: personal(s),
                archetype: arch,
            });
            t += d;
        }
    }
    Plan {
        pid: participant_id(index),
        gap_state: personal(cfg.baseline),
        intervals,
        traits,
        t0,
        t_end: t + cfg.margin_s,
    }
}

impl Plan {
    fn state_at(&self, t: f64) -> &StateParams {
        let i = self.intervals.partition_point(|p| p.entry.end <= t);
        match self.intervals.get(i) {
            Some(p) if p.entry.start <= t => &p.state,
            _ => &self.gap_state,
        }
    }
}

fn n_samples(plan: &Plan, kind: SensorKind) -> usize {
    ((plan.t_end - plan.t0) * kind.rate()).round() as usize
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn beat_times(cfg: &SynthConfig, plan: &Plan, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let jitter = Normal::new(0.0, cfg.nn_jitter_s.max(1e-12)).unwrap();
    let mut beats = Vec::new();
    let mut t = plan.t0 + rng.random_range(0.2..0.8);
    while t < plan.t_end - 0.5 {
        beats.push(t);
        let s = plan.state_at(t);
        let rel = t - plan.t0;
        let nn = 60.0 / s.hr_bpm
            + s.lf_amp_s * (2.0 * PI * cfg.lf_hz * rel + plan.traits.lf_phase).sin()
            + s.hf_amp_s * (2.0 * PI * cfg.hf_hz * rel + plan.traits.hf_phase).sin()
            + if cfg.nn_jitter_s > 0.0 { jitter.sample(rng) } else { 0.0 };
        t += nn.max(0.3);
    }
    beats
}

/// Systolic and dicrotic Gaussians per beat, with baseline wander, noise
/// and saturation bursts. Returns samples and burst start times.
fn render_ppg(cfg: &SynthConfig, plan: &Plan, beats: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    const AMP: f64 = 50.0;
    const SIGMA: f64 = 0.06;
    const NOTCH_DELAY: f64 = 0.25;
    const NOTCH_RATIO: f64 = 0.35;
    let rate = SensorKind::Ppg.rate();
    let n = n_samples(plan, SensorKind::Ppg);
    let mut x = vec![0.0; n];
    let reach = (4.0 * SIGMA * rate).ceil() as i64;
    for &b in beats {
        for (centre, amp) in [(b, AMP), (b + NOTCH_DELAY, AMP * NOTCH_RATIO)] {
            let c = ((centre - plan.t0) * rate).round() as i64;
            for i in (c - reach).max(0)..(c + reach + 1).min(n as i64) {
                let dt = plan.t0 + i as f64 / rate - centre;
                x[i as usize] += amp * (-0.5 * (dt / SIGMA).powi(2)).exp();
            }
        }
    }
    let noise = Normal::new(0.0, cfg.ppg_noise.max(1e-12)).unwrap();
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / rate;
        *v += 8.0 * (2.0 * PI * 0.05 * t + wander_phase).sin();
        if cfg.ppg_noise > 0.0 {
            *v += noise.sample(rng);
        }
    }
    let mut bursts = Vec::new();
    if cfg.artifact_rate_per_min > 0.0 {
        let gap = Exp::new(cfg.artifact_rate_per_min / 60.0).unwrap();
        let mut t = plan.t0 + gap.sample(rng);
        while t < plan.t_end {
            bursts.push(t);
            let a = ((t - plan.t0) * rate).round() as usize;
            let b = (a + (cfg.artifact_duration_s * rate).round() as usize).min(n);
            let level = if rng.random_bool(0.5) { 4.0 * AMP } else { -4.0 * AMP };
            x[a.min(n)..b].iter_mut().for_each(|v| *v = level);
            t += cfg.artifact_duration_s + gap.sample(rng);
        }
    }
    (x.into_iter().map(|v| round_to(v, 3)).collect(), bursts)
}

/// Bateman response normalised to a unit peak.
fn bateman(t: f64) -> f64 {
    const RISE: f64 = 0.75;
    const DECAY: f64 = 2.0;
    if t <= 0.0 {
        return 0.0;
    }
    let peak_t = (DECAY / RISE).ln() * RISE * DECAY / (DECAY - RISE);
    let peak = (-peak_t / DECAY).exp() - (-peak_t / RISE).exp();
    ((-t / DECAY).exp() - (-t / RISE).exp()) / peak
}

/// SCR onsets inside intervals only, away from the interval edges.
fn scr_events(plan: &Plan, rng: &mut ChaCha8Rng) -> Vec<Vec<(f64, f64)>> {
    const LEAD: f64 = 5.0;
    const TAIL: f64 = 8.0;
    const REFRACTORY: f64 = 5.0;
    plan.intervals
        .iter()
        .map(|p| {
            let mut out = Vec::new();
            if p.state.scr_per_min <= 0.0 {
                return out;
            }
            let gap = Exp::new(p.state.scr_per_min / 60.0).unwrap();
            let mut t = p.entry.start + LEAD + gap.sample(rng);
            while t < p.entry.end - TAIL {
                out.push((t, rng.random_range(0.1..0.4)));
                t += REFRACTORY + gap.sample(rng);
            }
            out
        })
        .collect()
}

fn render_eda(plan: &Plan, scrs: &[Vec<(f64, f64)>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = SensorKind::Eda.rate();
    let n = n_samples(plan, SensorKind::Eda);
    let noise = Normal::new(0.0, 0.001).unwrap();
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            plan.traits.scl + 0.3 * (2.0 * PI * t / 900.0 + phase).sin() + noise.sample(rng)
        })
        .collect();
    for &(onset, amp) in scrs.iter().flatten() {
        let a = ((onset - plan.t0) * rate).floor().max(0.0) as usize;
        let b = (a + (30.0 * rate) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(b).skip(a) {
            *v += amp * bateman(plan.t0 + i as f64 / rate - onset);
        }
    }
    x.into_iter().map(|v| round_to(v.max(0.0), 4)).collect()
}

fn render_acc(plan: &Plan, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let rate = SensorKind::Acc.rate();
    let n = n_samples(plan, SensorKind::Acc);
    let tilts: Vec<(f64, f64)> = plan
        .intervals
        .iter()
        .map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
        .collect();
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let t = plan.t0 + i as f64 / rate;
            let k = plan.intervals.partition_point(|p| p.entry.end <= t);
            let inside = plan.intervals.get(k).is_some_and(|p| p.entry.start <= t);
            let (a, b) = if inside { tilts[k] } else { (0.0, 0.0) };
            let sd = plan.state_at(t).acc_sd_g;
            let g = [a.sin() * b.cos(), b.sin(), a.cos() * b.cos()];
            g.map(|c| ((c + sd * unit.sample(rng)) * crate::ingest::ACC_COUNTS_PER_G).round() / crate::ingest::ACC_COUNTS_PER_G)
        })
        .collect()
}

fn render_tmp(plan: &Plan, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let rate = SensorKind::Tmp.rate();
    let n = n_samples(plan, SensorKind::Tmp);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let span = plan.t_end - plan.t0;
    (0..n)
        .map(|i| {
            let t = plan.t0 + i as f64 / rate;
            let drift = 0.4 * (t - plan.t0) / span;
            round_to(plan.state_at(t).temp_c + drift + noise.sample(rng), 2)
        })
        .collect()
}

pub struct Session {
    pub streams: SessionStreams,
    pub timeline: SessionTimeline,
    pub truth: Vec<IntervalTruth>,
}

pub fn generate_session(cfg: &SynthConfig, index: usize) -> Result<Session, SynthError> {
    cfg.validate()?;
    if index >= cfg.participants {
        return Err(SynthError::Config(format!("participant {index} outside 0..{}", cfg.participants)));
    }
    let omitted = cfg.omitted_events();
    let plan = plan_session(cfg, index, &omitted[index]);
    let pseed = derive_seed(cfg.seed, index as u64);
    let rng_for = |k: u64| ChaCha8Rng::seed_from_u64(derive_seed(pseed, k));

    let beats = beat_times(cfg, &plan, &mut rng_for(1));
    let (ppg, bursts) = render_ppg(cfg, &plan, &beats, &mut rng_for(2));
    let scrs = scr_events(&plan, &mut rng_for(3));
    let eda = render_eda(&plan, &scrs, &mut rng_for(4));
    let acc = render_acc(&plan, &mut rng_for(5));
    let tmp = render_tmp(&plan, &mut rng_for(6));

    let stream = |kind, samples| SensorStream::new(kind, plan.t0, samples).map_err(|e| SynthError::Config(e.to_string()));
    let streams = SessionStreams {
        ppg: stream(SensorKind::Ppg, Samples::Scalar(ppg))?,
        acc: stream(SensorKind::Acc, Samples::Triaxial(acc))?,
        eda: stream(SensorKind::Eda, Samples::Scalar(eda))?,
        tmp: stream(SensorKind::Tmp, Samples::Scalar(tmp))?,
    };
    let timeline = SessionTimeline::new(plan.pid.clone(), plan.intervals.iter().map(|p| p.entry).collect())
        .map_err(|e| SynthError::Config(e.to_string()))?;

    let acc_samples = streams.acc.triaxial().expect("triaxial");
    let truth = plan
        .intervals
        .iter()
        .zip(scrs)
        .map(|(p, scr)| {
            let (s, e) = (p.entry.start, p.entry.end);
            let inside: Vec<f64> = beats.iter().copied().filter(|&b| b >= s && b < e).collect();
            let nn = inside.windows(2).map(|w| w[1] - w[0]).collect();
            let a = ((s - plan.t0) * SensorKind::Acc.rate()).ceil() as usize;
            let b = (((e - plan.t0) * SensorKind::Acc.rate()).ceil() as usize).min(acc_samples.len());
            let mags: Vec<f64> = acc_samples[a..b].iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect();
            let labels = Task::ALL
                .iter()
                .filter_map(|t| t.label(p.entry.event, p.entry.phase).map(|l| (t.token().to_string(), l)))
                .collect();
            IntervalTruth {
                participant_id: plan.pid.clone(),
                event: p.entry.event,
                phase: p.entry.phase,
                start: s,
                end: e,
                hr_bpm: p.state.hr_bpm,
                nn,
                beat_times: inside,
                scr_onsets: scr.iter().map(|x| x.0).collect(),
                scr_amplitudes: scr.iter().map(|x| x.1).collect(),
                acc_sd: sample_sd(&mags),
                archetype: p.archetype,
                artifacts: bursts
                    .iter()
                    .filter(|&&t| t < e && t + cfg.artifact_duration_s > s)
                    .count(),
                labels,
            }
        })
        .collect();
    Ok(Session { streams, timeline, truth })
}

fn write_file(path: &Path, contents: &str) -> Result<(), SynthError> {
    fs::write(path, contents).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write every session under `dir/<participant>/` plus the ground-truth
/// manifest. Sessions are generated in parallel.
pub fn write_study(cfg: &SynthConfig, dir: &Path) -> Result<GroundTruth, SynthError> {
    cfg.validate()?;
    let io = |source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    let truths: Vec<Vec<IntervalTruth>> = (0..cfg.participants)
        .into_par_iter()
        .map(|i| {
            let s = generate_session(cfg, i)?;
            let pdir = dir.join(&s.timeline.participant_id);
            fs::create_dir_all(&pdir).map_err(|source| SynthError::Io {
                path: pdir.display().to_string(),
                source,
            })?;
            for kind in SensorKind::ALL {
                write_file(&pdir.join(kind.file_name()), &write_stream(s.streams.get(kind)))?;
            }
            write_file(&pdir.join(TIMELINE_FILE), &write_timeline(&s.timeline))?;
            Ok(s.truth)
        })
        .collect::<Result<_, SynthError>>()?;
    let truth = GroundTruth {
        config: cfg.clone(),
        participants: (0..cfg.participants).map(participant_id).collect(),
        intervals: truths.into_iter().flatten().collect(),
    };
    let json = serde_json::to_string(&truth).map_err(|e| SynthError::Config(e.to_string()))?;
    write_file(&dir.join(GROUND_TRUTH_FILE), &json)?;
    Ok(truth)
}

/// Feature-space generator: standardised features with per-task class
/// shifts, participant offsets and optional 2-D response archetypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSynthConfig {
    pub participants: usize,
    pub completeness: Completeness,
    /// Per-participant additive offset SD, applied to every feature.
    pub participant_offset_sd: f64,
    pub noise_sd: f64,
    pub effects: Vec<FeatureEffect>,
    pub archetypes: Option<FeatureArchetypes>,
    pub seed: u64,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        Self {
            participants: 46,
            completeness: Completeness::Complete,
            participant_offset_sd: 0.0,
            noise_sd: 1.0,
            effects: Vec::new(),
            archetypes: None,
            seed: 0,
        }
    }
}

/// Adds `shift` to `feature` in rows labelled 1 for `task`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureEffect {
    pub task: Task,
    pub feature: usize,
    pub shift: f64,
}

/// During-interval archetypes on a square grid in two features, spaced
/// `separation` noise SDs apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureArchetypes {
    pub alone: usize,
    pub social: usize,
    pub features: [usize; 2],
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRowTruth {
    pub key: RowKey,
    pub archetype: Option<usize>,
}

pub fn synth_feature_matrix(cfg: &FeatureSynthConfig) -> Result<(FeatureMatrix, Vec<FeatureRowTruth>), SynthError> {
    if cfg.effects.iter().any(|e| e.feature >= N_FEATURES) {
        return Err(SynthError::Config("effect feature out of range".into()));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.participant_offset_sd >= 0.0) {
        return Err(SynthError::Config("negative SD".into()));
    }
    if let Some(a) = &cfg.archetypes {
        if a.features.iter().any(|&f| f >= N_FEATURES) || a.alone + a.social == 0 {
            return Err(SynthError::Config("invalid archetype spec".into()));
        }
    }
    let shim = SynthConfig {
        participants: cfg.participants,
        completeness: cfg.completeness.clone(),
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    if cfg.completeness == Completeness::Paper594 && cfg.participants != 46 {
        return Err(SynthError::Config("the paper594 completeness pattern needs exactly 46 participants".into()));
    }
    let omitted = shim.omitted_events();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (p, missing) in omitted.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, p as u64));
        let offset: Vec<f64> = (0..N_FEATURES).map(|_| cfg.participant_offset_sd * unit.sample(&mut rng)).collect();
        let mut t = 0.0;
        for event in Event::ALL.into_iter().filter(|e| !missing.contains(e)) {
            let archetype = cfg.archetypes.map(|a| {
                if event == Event::Alone || a.social == 0 {
                    rng.random_range(0..a.alone.max(1))
                } else {
                    a.alone + rng.random_range(0..a.social)
                }
            });
            for phase in Phase::ALL {
                let mut f = [0.0; N_FEATURES];
                for (j, v) in f.iter_mut().enumerate() {
                    *v = offset[j] + cfg.noise_sd * unit.sample(&mut rng);
                }
                for e in &cfg.effects {
                    if e.task.label(event, phase) == Some(1) {
                        f[e.feature] += e.shift;
                    }
                }
                let mut arch = None;
                if let (Some(a), Some(id), Phase::During) = (cfg.archetypes, archetype, phase) {
                    let (gx, gy) = grid_cell(id, a.alone + a.social);
                    f[a.features[0]] += gx * a.separation * cfg.noise_sd;
                    f[a.features[1]] += gy * a.separation * cfg.noise_sd;
                    arch = Some(id);
                }
                let key = RowKey {
                    participant_id: participant_id(p),
                    event,
                    phase,
                };
                truth.push(FeatureRowTruth { key: key.clone(), archetype: arch });
                rows.push((t, FeatureRow { key, features: FeatureVector::from_array(f) }));
                t += 1.0;
            }
        }
    }
    let m = crate::features::assemble_matrix(rows).map_err(|e| SynthError::Config(e.to_string()))?;
    Ok((m, truth))
}

/// Mean planted NN interval, NaN when the interval has no beats.
pub fn truth_nn_mean(t: &IntervalTruth) -> f64 {
    if t.nn.is_empty() { f64::NAN } else { mean(&t.nn) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{process_slice, ExtractConfig};
    use crate::hrv::NnCleaning;
    use crate::ingest::{parse_stream, slice_intervals};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            participants: 3,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn interval_counts() {
        assert_eq!(SynthConfig { participants: 46, ..small(1) }.expected_intervals(), 690);
        assert_eq!(SynthConfig::preset(Preset::Paper594, 1).expected_intervals(), 594);
        assert_eq!(SynthConfig::preset(Preset::Paper594, 99).expected_intervals(), 594);
        assert_eq!(SynthConfig { participants: 0, ..small(1) }.expected_intervals(), 0);
        assert!(SynthConfig { participants: 10, ..SynthConfig::preset(Preset::Paper594, 1) }.validate().is_err());
    }

    #[test]
    fn session_layout() {
        let cfg = small(2);
        let s = generate_session(&cfg, 0).unwrap();
        assert_eq!(s.timeline.entries.len(), 15);
        assert_eq!(s.timeline.entries[0].event, Event::Alone);
        let slices = slice_intervals(&s.streams, &s.timeline).unwrap();
        let dyad_during = slices
            .iter()
            .find(|x| x.event == Event::DyadImplicit && x.phase == Phase::During)
            .unwrap();
        assert_eq!(dyad_during.streams.ppg.len(), 4 * 60 * 64);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let cfg = small(3);
        let a = generate_session(&cfg, 1).unwrap();
        let b = generate_session(&cfg, 1).unwrap();
        for kind in SensorKind::ALL {
            let text = write_stream(a.streams.get(kind));
            assert_eq!(text, write_stream(b.streams.get(kind)));
            assert_eq!(&parse_stream(text.as_bytes(), kind).unwrap(), a.streams.get(kind), "{kind}");
        }
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn constant_sixty_bpm_closed_loop() {
        let cfg = SynthConfig {
            participants: 1,
            baseline: StateParams { hr_bpm: 60.0, lf_amp_s: 0.0, hf_amp_s: 0.0, ..StateParams::default() },
            effects: Effects {
                social: StateDelta::default(),
                during: StateDelta::default(),
                post: StateDelta::default(),
                group: StateDelta::default(),
                explicit: StateDelta::default(),
            },
            spread: Spread { hr_bpm: 0.0, ..Spread::default() },
            nn_jitter_s: 0.0,
            seed: 4,
            ..SynthConfig::default()
        };
        let s = generate_session(&cfg, 0).unwrap();
        let xcfg = ExtractConfig::default();
        for (slice, truth) in slice_intervals(&s.streams, &s.timeline).unwrap().iter().zip(&s.truth) {
            let p = process_slice(slice, &xcfg);
            let f = p.features(&NnCleaning::None, None, &xcfg.lomb).unwrap();
            assert!((f.nn_mean - 1.0).abs() < 1.0 / 64.0, "{}", f.nn_mean);
            assert_eq!(f.scr_peaksn * slice.duration(), truth.scr_onsets.len() as f64, "{}", slice.phase);
            assert!((f.acc_sd - truth.acc_sd).abs() <= 0.05 * truth.acc_sd);
        }
    }

    #[test]
    fn feature_generator_shapes() {
        let cfg = FeatureSynthConfig {
            completeness: Completeness::Paper594,
            archetypes: Some(FeatureArchetypes { alone: 1, social: 6, features: [0, 10], separation: 8.0 }),
            ..FeatureSynthConfig::default()
        };
        let (m, truth) = synth_feature_matrix(&cfg).unwrap();
        assert_eq!(m.len(), 594);
        assert_eq!(truth.len(), 594);
        assert!(truth.iter().filter(|t| t.key.phase != Phase::During).all(|t| t.archetype.is_none()));
        assert_eq!(synth_feature_matrix(&cfg).unwrap().0, m);
    }

    #[test]
    fn bateman_peaks_at_one() {
        let peak = (0..4000).map(|i| bateman(i as f64 * 0.001)).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-5);
        assert_eq!(bateman(-1.0), 0.0);
    }
}
