//! Behavior traces: the thirteen monitored hardware events, timestamped
//! samples, and the CSV trace format.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of monitored events per sample.
pub const NUM_EVENTS: usize = 13;

/// Default sampling interval of the performance monitor.
pub const DEFAULT_INTERVAL_MS: f64 = 10.0;

/// The monitored hardware events, in canonical column order (descending
/// mean importance).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventId {
    Instruction,
    StallIssue,
    StallRetire,
    Cycles,
    Load,
    DtlbRead,
    Store,
    BpuRead,
    DtlbWrite,
    Branch,
    L1dReadMiss,
    L1iReadMiss,
    ContextSwitch,
}

impl EventId {
    pub const ALL: [EventId; NUM_EVENTS] = [
        EventId::Instruction,
        EventId::StallIssue,
        EventId::StallRetire,
        EventId::Cycles,
        EventId::Load,
        EventId::DtlbRead,
        EventId::Store,
        EventId::BpuRead,
        EventId::DtlbWrite,
        EventId::Branch,
        EventId::L1dReadMiss,
        EventId::L1iReadMiss,
        EventId::ContextSwitch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventId::Instruction => "instruction",
            EventId::StallIssue => "stall_issue",
            EventId::StallRetire => "stall_retire",
            EventId::Cycles => "cycles",
            EventId::Load => "load",
            EventId::DtlbRead => "dtlb_read",
            EventId::Store => "store",
            EventId::BpuRead => "bpu_read",
            EventId::DtlbWrite => "dtlb_write",
            EventId::Branch => "branch",
            EventId::L1dReadMiss => "l1d_read_miss",
            EventId::L1iReadMiss => "l1i_read_miss",
            EventId::ContextSwitch => "context_switch",
        }
    }

    /// Column index of this event in a sample.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventId::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::Parse(format!("unknown event `{s}`")))
    }
}

/// One sampling frame: per-interval counter deltas for every monitored event.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSample {
    pub t_ms: f64,
    pub counts: [f64; NUM_EVENTS],
}

impl BehaviorSample {
    pub fn new(t_ms: f64, counts: [f64; NUM_EVENTS]) -> Self {
        Self { t_ms, counts }
    }

    pub fn get(&self, event: EventId) -> f64 {
        self.counts[event.index()]
    }
}

/// What was running while a trace was recorded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioLabel {
    pub workload: Option<String>,
    pub benign: Option<String>,
    pub attack: Option<String>,
}

impl ScenarioLabel {
    pub fn workload(name: impl Into<String>) -> Self {
        Self { workload: Some(name.into()), ..Self::default() }
    }

    pub fn is_set(&self) -> bool {
        self.workload.is_some() || self.benign.is_some() || self.attack.is_some()
    }

    pub fn has_attack(&self) -> bool {
        self.attack.is_some()
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> =
            [&self.workload, &self.benign, &self.attack].into_iter().flatten().map(String::as_str).collect();
        if parts.is_empty() {
            f.write_str("unlabeled")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

/// Where a trace came from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generated { seed: u64 },
    Derived(String),
}

/// A non-empty, uniformly sampled sequence of behavior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<BehaviorSample>,
    interval_ms: f64,
    pub label: ScenarioLabel,
    pub source: TraceSource,
}

fn interval_matches(expected: f64, found: f64) -> bool {
    (found - expected).abs() <= 1e-6 * expected.abs().max(1.0)
}

impl Trace {
    /// Builds a trace, checking the sampling invariants. A single-sample
    /// trace takes `interval_ms` as given.
    pub fn new(
        samples: Vec<BehaviorSample>,
        interval_ms: f64,
        label: ScenarioLabel,
        source: TraceSource,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("trace has no samples".into()));
        }
        if !(interval_ms > 0.0 && interval_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!("sampling interval {interval_ms} ms")));
        }
        for (i, s) in samples.iter().enumerate() {
            check_counts(&s.counts, i + 1)?;
            if i > 0 {
                let prev = samples[i - 1].t_ms;
                if s.t_ms <= prev {
                    return Err(Error::NonMonotoneTimestamp { line: i + 1, t_ms: s.t_ms, prev_ms: prev });
                }
                if !interval_matches(interval_ms, s.t_ms - prev) {
                    return Err(Error::IntervalMismatch { line: i + 1, expected: interval_ms, found: s.t_ms - prev });
                }
            }
        }
        Ok(Self { samples, interval_ms, label, source })
    }

    pub fn samples(&self) -> &[BehaviorSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn interval_ms(&self) -> f64 {
        self.interval_ms
    }

    /// Contiguous sub-trace `[start, end)`; panics on an empty or
    /// out-of-range slice.
    pub fn slice(&self, start: usize, end: usize) -> Trace {
        assert!(start < end && end <= self.samples.len(), "invalid trace slice {start}..{end}");
        Trace {
            samples: self.samples[start..end].to_vec(),
            interval_ms: self.interval_ms,
            label: self.label.clone(),
            source: self.source.clone(),
        }
    }

    /// Counter matrix, one row per sample.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.counts.to_vec()).collect()
    }
}

fn check_counts(counts: &[f64; NUM_EVENTS], line: usize) -> Result<()> {
    for (e, &v) in EventId::ALL.iter().zip(counts) {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidCount { line, event: e.name().into(), value: v.to_string() });
        }
    }
    Ok(())
}

/// The exact header line of the trace CSV format.
pub fn csv_header() -> String {
    let mut h = String::from("t_ms");
    for e in EventId::ALL {
        h.push(',');
        h.push_str(e.name());
    }
    h
}

/// Loads a trace CSV. The sampling interval is inferred from the first two
/// rows and enforced on every later row.
pub fn load_trace(path: impl AsRef<Path>, label: ScenarioLabel) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let header = reader.headers().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?.clone();
    let expected = csv_header();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found.join(",") != expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: expected header `{expected}`, found `{}` ({} columns)",
            path.display(),
            found.join(","),
            found.len()
        )));
    }

    let mut samples: Vec<BehaviorSample> = Vec::new();
    let mut interval: Option<f64> = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => {
                Error::SchemaMismatch(format!("line {line}: {len} fields, expected {}", NUM_EVENTS + 1))
            }
            _ => Error::Parse(format!("line {line}: {e}")),
        })?;
        let field = |j: usize| record.get(j).unwrap_or("").trim();
        let t_ms: f64 =
            field(0).parse().map_err(|_| Error::Parse(format!("line {line}: bad timestamp `{}`", field(0))))?;
        let mut counts = [0.0; NUM_EVENTS];
        for (k, e) in EventId::ALL.iter().enumerate() {
            let raw = field(k + 1);
            counts[k] =
                raw.parse().map_err(|_| Error::InvalidCount { line, event: e.name().into(), value: raw.into() })?;
        }
        check_counts(&counts, line)?;
        if let Some(prev) = samples.last() {
            if !(t_ms > prev.t_ms) {
                return Err(Error::NonMonotoneTimestamp { line, t_ms, prev_ms: prev.t_ms });
            }
            let step = t_ms - prev.t_ms;
            match interval {
                None => interval = Some(step),
                Some(expected) if !interval_matches(expected, step) => {
                    return Err(Error::IntervalMismatch { line, expected, found: step });
                }
                Some(_) => {}
            }
        }
        samples.push(BehaviorSample { t_ms, counts });
    }
    if samples.is_empty() {
        return Err(Error::Empty(format!("{} has no samples", path.display())));
    }
    Trace::new(samples, interval.unwrap_or(DEFAULT_INTERVAL_MS), label, TraceSource::File(path.to_path_buf()))
}

/// Writes a trace in the CSV format. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace(trace, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace(trace: &Trace, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header())?;
    for s in trace.samples() {
        write!(out, "{}", s.t_ms)?;
        for v in s.counts {
            write!(out, ",{v}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Splits a trace into contiguous train/validation/test parts.
///
/// Part sizes are `round(fraction * N)` for the first two parts, the rest
/// going to the test part.
pub fn split_trace(trace: &Trace, fractions: (f64, f64, f64)) -> Result<(Trace, Trace, Trace)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = trace.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::TooShort(format!("{n} samples cannot be split into three non-empty parts")));
    }
    Ok((trace.slice(0, n_train), trace.slice(n_train, n_train + n_val), trace.slice(n_train + n_val, n)))
}

/// Splits a trace into three equal parts.
pub fn split_equal(trace: &Trace) -> Result<(Trace, Trace, Trace)> {
    split_trace(trace, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn row(t: f64, v: f64) -> String {
        let mut s = t.to_string();
        for _ in 0..NUM_EVENTS {
            s.push_str(&format!(",{v}"));
        }
        s
    }

    fn synthetic(n: usize) -> Trace {
        let samples = (0..n).map(|i| BehaviorSample::new(i as f64 * 10.0, [i as f64; NUM_EVENTS])).collect();
        Trace::new(samples, 10.0, ScenarioLabel::workload("w"), TraceSource::Derived("test".into())).unwrap()
    }

    #[test]
    fn event_order_is_canonical() {
        let names: Vec<_> = EventId::ALL.iter().map(|e| e.name()).collect();
        assert_eq!(names.len(), 13);
        assert_eq!(names[0], "instruction");
        assert_eq!(names[12], "context_switch");
        for (i, e) in EventId::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(e.name().parse::<EventId>().unwrap(), *e);
        }
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp(&format!("{}\n{}\n{}\n{}\n", csv_header(), row(0.0, 1.0), row(10.0, 2.0), row(20.0, 3.0)));
        let t = load_trace(f.path(), ScenarioLabel::workload("w")).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.interval_ms(), 10.0);
        assert_eq!(t.samples()[2].counts[4], 3.0);
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let f = write_tmp(&format!("{}\n{}\n{}\n", csv_header(), row(0.0, 1.0), row(0.0, 2.0)));
        let err = load_trace(f.path(), ScenarioLabel::default()).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTimestamp { .. }), "{err}");
    }

    #[test]
    fn twelve_columns_is_schema_mismatch() {
        let header: Vec<_> = csv_header().split(',').take(13).map(String::from).collect();
        let body: Vec<_> = row(0.0, 1.0).split(',').take(13).map(String::from).collect();
        let f = write_tmp(&format!("{}\n{}\n", header.join(","), body.join(",")));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::SchemaMismatch(_))));

        let f = write_tmp(&format!("{}\n{}\n", csv_header(), body.join(",")));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn bad_values_are_rejected() {
        let f = write_tmp(&format!("{}\n{}\n", csv_header(), row(0.0, -1.0)));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::InvalidCount { .. })));
        let f = write_tmp(&format!("{}\n{}\n", csv_header(), row(0.0, f64::NAN)));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::InvalidCount { .. })));
        let f = write_tmp(&format!("{}\n", csv_header()));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn interval_change_is_rejected() {
        let f = write_tmp(&format!("{}\n{}\n{}\n{}\n", csv_header(), row(0.0, 1.0), row(10.0, 1.0), row(25.0, 1.0)));
        assert!(matches!(load_trace(f.path(), ScenarioLabel::default()), Err(Error::IntervalMismatch { .. })));
    }

    #[test]
    fn split_examples() {
        let (a, b, c) = split_equal(&synthetic(300)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (100, 100, 100));
        let (a, b, c) = split_trace(&synthetic(10), (0.8, 0.1, 0.1)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert!(matches!(split_equal(&synthetic(2)), Err(Error::TooShort(_))));
        assert!(split_trace(&synthetic(10), (0.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn split_parts_concatenate() {
        let t = synthetic(47);
        let (a, b, c) = split_trace(&t, (0.5, 0.3, 0.2)).unwrap();
        let joined: Vec<_> = [a, b, c].iter().flat_map(|p| p.samples().to_vec()).collect();
        assert_eq!(joined, t.samples());
    }
}
