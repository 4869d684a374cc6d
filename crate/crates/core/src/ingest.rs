//! Wristband export parsing, session timelines and interval slicing.
//!
//! Stream files carry a two-line header (start epoch seconds, sample rate)
//! followed by one sample per line. The accelerometer file repeats each
//! header value three times and stores raw integer counts in 1/64 g.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Raw accelerometer counts per g.
pub const ACC_COUNTS_PER_G: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("timeline error: {0}")]
    Timeline(String),
    #[error("channel {channel} does not cover {entry}")]
    Coverage { channel: SensorKind, entry: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SensorKind {
    Ppg,
    Acc,
    Eda,
    Tmp,
}

impl SensorKind {
    pub const ALL: [SensorKind; 4] = [SensorKind::Ppg, SensorKind::Acc, SensorKind::Eda, SensorKind::Tmp];

    pub fn rate(self) -> f64 {
        match self {
            SensorKind::Ppg => 64.0,
            SensorKind::Acc => 32.0,
            SensorKind::Eda | SensorKind::Tmp => 4.0,
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            SensorKind::Acc => 3,
            _ => 1,
        }
    }

    /// Export file name for this channel.
    pub fn file_name(self) -> &'static str {
        match self {
            SensorKind::Ppg => "BVP.csv",
            SensorKind::Acc => "ACC.csv",
            SensorKind::Eda => "EDA.csv",
            SensorKind::Tmp => "TEMP.csv",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SensorKind::Ppg => "PPG",
            SensorKind::Acc => "ACC",
            SensorKind::Eda => "EDA",
            SensorKind::Tmp => "TMP",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Scalar(Vec<f64>),
    /// Accelerometer samples in g.
    Triaxial(Vec<[f64; 3]>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Scalar(v) => v.len(),
            Samples::Triaxial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slice(&self, lo: usize, hi: usize) -> Samples {
        match self {
            Samples::Scalar(v) => Samples::Scalar(v[lo..hi].to_vec()),
            Samples::Triaxial(v) => Samples::Triaxial(v[lo..hi].to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub kind: SensorKind,
    pub start_time: f64,
    pub rate: f64,
    pub samples: Samples,
}

impl SensorStream {
    pub fn new(kind: SensorKind, start_time: f64, samples: Samples) -> Result<Self, IngestError> {
        let stream = Self {
            kind,
            start_time,
            rate: kind.rate(),
            samples,
        };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if (self.rate - self.kind.rate()).abs() > 1e-9 {
            return Err(IngestError::Schema(format!(
                "{} stream must be sampled at {} Hz, found {}",
                self.kind,
                self.kind.rate(),
                self.rate
            )));
        }
        if !self.start_time.is_finite() {
            return Err(IngestError::Schema("start time is not finite".into()));
        }
        let dim_ok = matches!(
            (&self.samples, self.kind.dimension()),
            (Samples::Scalar(_), 1) | (Samples::Triaxial(_), 3)
        );
        if !dim_ok {
            return Err(IngestError::Schema(format!("{} sample dimension mismatch", self.kind)));
        }
        let finite = match &self.samples {
            Samples::Scalar(v) => v.iter().all(|x| x.is_finite()),
            Samples::Triaxial(v) => v.iter().flatten().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(IngestError::Schema(format!("{} stream has non-finite samples", self.kind)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time just past the last sample.
    pub fn end_time(&self) -> f64 {
        self.start_time + self.len() as f64 / self.rate
    }

    pub fn scalar(&self) -> Option<&[f64]> {
        match &self.samples {
            Samples::Scalar(v) => Some(v),
            Samples::Triaxial(_) => None,
        }
    }

    pub fn triaxial(&self) -> Option<&[[f64; 3]]> {
        match &self.samples {
            Samples::Triaxial(v) => Some(v),
            Samples::Scalar(_) => None,
        }
    }

    /// Samples with timestamps in `[start, end)`, or `None` if the stream
    /// does not cover that span.
    pub fn restrict(&self, start: f64, end: f64) -> Option<SensorStream> {
        let eps = 1e-6 / self.rate;
        if start < self.start_time - eps || end > self.end_time() + eps {
            return None;
        }
        let index = |t: f64| (((t - self.start_time) * self.rate) - 1e-9).ceil().max(0.0) as usize;
        let lo = index(start).min(self.len());
        let hi = index(end).min(self.len());
        Some(SensorStream {
            kind: self.kind,
            start_time: self.start_time + lo as f64 / self.rate,
            rate: self.rate,
            samples: self.samples.slice(lo, hi),
        })
    }
}

fn parse_header_line(line: &str, kind: SensorKind, lineno: usize) -> Result<f64, IngestError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let expected = kind.dimension();
    if fields.len() != expected {
        return Err(parse_err(
            lineno,
            format!("expected {expected} header field(s), found {}", fields.len()),
        ));
    }
    let values = fields
        .iter()
        .map(|f| f.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| parse_err(lineno, format!("malformed header value: {e}")))?;
    if values.iter().any(|v| !v.is_finite() || *v != values[0]) {
        return Err(parse_err(lineno, "header values must be finite and identical"));
    }
    Ok(values[0])
}

pub fn parse_stream(bytes: &[u8], kind: SensorKind) -> Result<SensorStream, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(1, format!("not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n1, l1) = lines.next().ok_or_else(|| parse_err(1, "missing start-time header"))?;
    let start_time = parse_header_line(l1, kind, n1)?;
    let (n2, l2) = lines.next().ok_or_else(|| parse_err(2, "missing sample-rate header"))?;
    let rate = parse_header_line(l2, kind, n2)?;
    if (rate - kind.rate()).abs() > 1e-9 {
        return Err(IngestError::Schema(format!(
            "{kind} stream must be sampled at {} Hz, header says {rate}",
            kind.rate()
        )));
    }

    let samples = match kind {
        SensorKind::Acc => {
            let mut out = Vec::new();
            for (lineno, line) in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let mut xyz = [0.0; 3];
                let mut fields = line.split(',').map(str::trim);
                for slot in &mut xyz {
                    let f = fields
                        .next()
                        .ok_or_else(|| parse_err(lineno, "accelerometer row needs 3 values"))?;
                    let counts: i64 = f
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("non-integer accelerometer count {f:?}")))?;
                    *slot = counts as f64 / ACC_COUNTS_PER_G;
                }
                if fields.next().is_some() {
                    return Err(parse_err(lineno, "accelerometer row has more than 3 values"));
                }
                out.push(xyz);
            }
            Samples::Triaxial(out)
        }
        _ => {
            let mut out = Vec::new();
            for (lineno, line) in lines {
                let f = line.trim();
                if f.is_empty() {
                    continue;
                }
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("non-numeric sample {f:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, "non-finite sample"));
                }
                out.push(v);
            }
            Samples::Scalar(out)
        }
    };
    if samples.is_empty() {
        return Err(IngestError::Schema(format!("{kind} stream has no samples")));
    }
    SensorStream::new(kind, start_time, samples)
}

/// Render a stream in the export format. Scalars use the shortest
/// representation that parses back to the same `f64`.
pub fn write_stream(stream: &SensorStream) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(stream.len() * 10 + 64);
    match &stream.samples {
        Samples::Triaxial(v) => {
            let t = fmt_f64(stream.start_time);
            let r = fmt_f64(stream.rate);
            let _ = writeln!(out, "{t}, {t}, {t}");
            let _ = writeln!(out, "{r}, {r}, {r}");
            for s in v {
                let c = s.map(|g| (g * ACC_COUNTS_PER_G).round() as i64);
                let _ = writeln!(out, "{},{},{}", c[0], c[1], c[2]);
            }
        }
        Samples::Scalar(v) => {
            let _ = writeln!(out, "{}", fmt_f64(stream.start_time));
            let _ = writeln!(out, "{}", fmt_f64(stream.rate));
            for x in v {
                let _ = writeln!(out, "{x}");
            }
        }
    }
    out
}

fn fmt_f64(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Alone,
    DyadImplicit,
    DyadExplicit,
    GroupImplicit,
    GroupExplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    During,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Alone,
    Social,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseClass {
    During,
    PrePost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSize {
    Dyad,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threat {
    Implicit,
    Explicit,
}

impl Event {
    pub const ALL: [Event; 5] = [
        Event::Alone,
        Event::DyadImplicit,
        Event::DyadExplicit,
        Event::GroupImplicit,
        Event::GroupExplicit,
    ];
    pub const SOCIAL: [Event; 4] = [
        Event::DyadImplicit,
        Event::DyadExplicit,
        Event::GroupImplicit,
        Event::GroupExplicit,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Event::Alone => "alone",
            Event::DyadImplicit => "dyad_implicit",
            Event::DyadExplicit => "dyad_explicit",
            Event::GroupImplicit => "group_implicit",
            Event::GroupExplicit => "group_explicit",
        }
    }

    pub fn context(self) -> Context {
        match self {
            Event::Alone => Context::Alone,
            _ => Context::Social,
        }
    }

    /// `None` for the alone event, which has no interaction size.
    pub fn size(self) -> Option<GroupSize> {
        match self {
            Event::Alone => None,
            Event::DyadImplicit | Event::DyadExplicit => Some(GroupSize::Dyad),
            Event::GroupImplicit | Event::GroupExplicit => Some(GroupSize::Group),
        }
    }

    /// `None` for the alone event, which has no evaluation variant.
    pub fn threat(self) -> Option<Threat> {
        match self {
            Event::Alone => None,
            Event::DyadImplicit | Event::GroupImplicit => Some(Threat::Implicit),
            Event::DyadExplicit | Event::GroupExplicit => Some(Threat::Explicit),
        }
    }

    /// Concurrent-phase duration in the session protocol, seconds.
    pub fn during_duration_s(self) -> f64 {
        match self {
            Event::Alone => 120.0,
            Event::DyadImplicit | Event::DyadExplicit => 240.0,
            Event::GroupImplicit | Event::GroupExplicit => 360.0,
        }
    }
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Pre, Phase::During, Phase::Post];

    pub fn token(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::During => "during",
            Phase::Post => "post",
        }
    }

    pub fn class(self) -> PhaseClass {
        match self {
            Phase::During => PhaseClass::During,
            Phase::Pre | Phase::Post => PhaseClass::PrePost,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Event {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Event::ALL
            .into_iter()
            .find(|e| e.token() == s.trim())
            .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

impl FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.token() == s.trim())
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub event: Event,
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
}

impl SessionEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

impl fmt::Display for SessionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} [{}, {})", self.event, self.phase, self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTimeline {
    pub participant_id: String,
    /// Sorted by start time.
    pub entries: Vec<SessionEvent>,
}

impl SessionTimeline {
    /// Sorts entries and checks ordering, uniqueness and overlap.
    pub fn new(participant_id: String, mut entries: Vec<SessionEvent>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !(e.start.is_finite() && e.end.is_finite() && e.end > e.start) {
                return Err(IngestError::Timeline(format!("{e}: end must be after start")));
            }
            if !seen.insert((e.event, e.phase)) {
                return Err(parse_err(0, format!("duplicate entry {}/{}", e.event, e.phase)));
            }
        }
        entries.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in entries.windows(2) {
            if w[1].start < w[0].end {
                return Err(IngestError::Timeline(format!("{} overlaps {}", w[0], w[1])));
            }
        }
        let alone_end = entries
            .iter()
            .filter(|e| e.event == Event::Alone)
            .map(|e| e.end)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(first_social) = entries.iter().find(|e| e.event != Event::Alone) {
            if alone_end > first_social.start {
                return Err(IngestError::Timeline(
                    "the alone event must precede all social events".into(),
                ));
            }
        }
        Ok(Self {
            participant_id,
            entries,
        })
    }
}

#[derive(Debug, Deserialize)]
struct TimelineRow {
    participant_id: String,
    event: String,
    phase: String,
    start_unix: f64,
    end_unix: f64,
}

pub const TIMELINE_HEADER: &str = "participant_id,event,phase,start_unix,end_unix";

pub fn parse_timeline(bytes: &[u8]) -> Result<SessionTimeline, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let expected: Vec<&str> = TIMELINE_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(1, format!("expected header {TIMELINE_HEADER:?}")));
    }
    let mut participant: Option<String> = None;
    let mut entries = Vec::new();
    let mut keys = HashSet::new();
    for record in reader.deserialize::<TimelineRow>() {
        let row = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = entries.len() + 2;
        let event: Event = row.event.parse().map_err(|m: String| parse_err(line, m))?;
        let phase: Phase = row.phase.parse().map_err(|m: String| parse_err(line, m))?;
        match &participant {
            None => participant = Some(row.participant_id.clone()),
            Some(p) if *p != row.participant_id => {
                return Err(parse_err(line, "timeline mixes participants"));
            }
            _ => {}
        }
        if !keys.insert((event, phase)) {
            return Err(parse_err(line, format!("duplicate entry {event}/{phase}")));
        }
        entries.push(SessionEvent {
            event,
            phase,
            start: row.start_unix,
            end: row.end_unix,
        });
    }
    let participant = participant.ok_or_else(|| parse_err(2, "timeline has no rows"))?;
    SessionTimeline::new(participant, entries)
}

pub fn write_timeline(timeline: &SessionTimeline) -> String {
    let mut out = format!("{TIMELINE_HEADER}\n");
    for e in &timeline.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            timeline.participant_id,
            e.event,
            e.phase,
            fmt_f64(e.start),
            fmt_f64(e.end)
        ));
    }
    out
}

/// The four channels of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStreams {
    pub ppg: SensorStream,
    pub acc: SensorStream,
    pub eda: SensorStream,
    pub tmp: SensorStream,
}

impl SessionStreams {
    pub fn get(&self, kind: SensorKind) -> &SensorStream {
        match kind {
            SensorKind::Ppg => &self.ppg,
            SensorKind::Acc => &self.acc,
            SensorKind::Eda => &self.eda,
            SensorKind::Tmp => &self.tmp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSlice {
    pub participant_id: String,
    pub event: Event,
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
    pub streams: SessionStreams,
}

impl IntervalSlice {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

pub fn slice_intervals(
    streams: &SessionStreams,
    timeline: &SessionTimeline,
) -> Result<Vec<IntervalSlice>, IngestError> {
    timeline
        .entries
        .iter()
        .map(|entry| {
            let cut = |kind: SensorKind| {
                streams
                    .get(kind)
                    .restrict(entry.start, entry.end)
                    .ok_or_else(|| IngestError::Coverage {
                        channel: kind,
                        entry: entry.to_string(),
                    })
            };
            Ok(IntervalSlice {
                participant_id: timeline.participant_id.clone(),
                event: entry.event,
                phase: entry.phase,
                start: entry.start,
                end: entry.end,
                streams: SessionStreams {
                    ppg: cut(SensorKind::Ppg)?,
                    acc: cut(SensorKind::Acc)?,
                    eda: cut(SensorKind::Eda)?,
                    tmp: cut(SensorKind::Tmp)?,
                },
            })
        })
        .collect()
}
