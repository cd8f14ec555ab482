//! The online two-step detector: windowed anomaly detection against the
//! normal-workload distribution, then attack/benign classification of the
//! paused core.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::predictor::SequencePredictor;
use crate::red::{compute_red, red_at, KdeDetector, RedSet};
use crate::trace::{BehaviorSample, Trace, DEFAULT_INTERVAL_MS};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Consecutive samples that must agree before a decision.
    pub window: usize,
    pub interval_ms: f64,
    /// Turnaround between pausing the workload and the first step-2 sample.
    pub pause_gap_ms: f64,
    pub t_red_ms: f64,
    pub t_kde1_ms: f64,
    pub t_kde2_ms: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window: 5,
            interval_ms: DEFAULT_INTERVAL_MS,
            pause_gap_ms: DEFAULT_INTERVAL_MS,
            t_red_ms: 0.02,
            t_kde1_ms: 0.76,
            t_kde2_ms: 1.58,
        }
    }
}

/// Stage costs `(t_red, t_kde1, t_kde2)` in ms measured for each published
/// window size.
pub const PUBLISHED_STAGE_COSTS: [(usize, f64, f64, f64); 5] = [
    (1, 0.02, 0.76, 1.58),
    (5, 0.02, 0.76, 1.58),
    (10, 0.02, 0.77, 1.60),
    (50, 0.02, 0.78, 1.62),
    (100, 0.02, 0.79, 1.65),
];

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        if !(self.interval_ms > 0.0 && self.interval_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampling interval must be positive, got {}",
                self.interval_ms
            )));
        }
        let costs = [self.pause_gap_ms, self.t_red_ms, self.t_kde1_ms, self.t_kde2_ms];
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidArgument("stage costs and pause gap must be non-negative".into()));
        }
        Ok(())
    }

    /// Default configuration with window `w` and the published stage costs
    /// for that window, if any were measured.
    pub fn published(w: usize) -> Self {
        let mut cfg = Self { window: w, ..Self::default() };
        if let Some(&(_, red, k1, k2)) = PUBLISHED_STAGE_COSTS.iter().find(|r| r.0 == w) {
            cfg.t_red_ms = red;
            cfg.t_kde1_ms = k1;
            cfg.t_kde2_ms = k2;
        }
        cfg
    }

    /// The pause gap rounded to whole samples.
    pub fn pause_gap_samples(&self) -> usize {
        (self.pause_gap_ms / self.interval_ms).round() as usize
    }
}

/// Time from the first sample of a window to a decision. The attack path
/// adds the pause gap and a full step-2 window.
pub fn latency_model(cfg: &EngineConfig, attack_path: bool) -> f64 {
    let window = cfg.window as f64 * cfg.interval_ms;
    let step1 = window + cfg.t_red_ms + cfg.t_kde1_ms;
    if attack_path {
        step1 + cfg.pause_gap_ms + window + cfg.t_red_ms + cfg.t_kde2_ms
    } else {
        step1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Case {
    /// Both detectors recognize the behavior: a stealthy attack.
    Case1,
    /// Known attack.
    Case2,
    /// Known benign program.
    Case3,
    /// Neither: zero-day attack or an unknown benign program.
    Case4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Priority {
    None,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    None,
    PauseWorkload,
    AlarmHigh,
    AlarmMedium,
    ResumeWorkload,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Case1, Case::Case2, Case::Case3, Case::Case4];

    pub fn from_votes(attack: bool, benign: bool) -> Case {
        match (attack, benign) {
            (true, true) => Case::Case1,
            (true, false) => Case::Case2,
            (false, true) => Case::Case3,
            (false, false) => Case::Case4,
        }
    }

    pub fn priority(self) -> Priority {
        match self {
            Case::Case1 | Case::Case2 => Priority::High,
            Case::Case3 => Priority::None,
            Case::Case4 => Priority::Medium,
        }
    }

    pub fn response(self) -> Response {
        match self {
            Case::Case1 | Case::Case2 => Response::AlarmHigh,
            Case::Case3 => Response::ResumeWorkload,
            Case::Case4 => Response::AlarmMedium,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Case::Case1 => "stealthy attack",
            Case::Case2 => "known attack",
            Case::Case3 => "benign program",
            Case::Case4 => "zero-day attack or new benign program",
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

macro_rules! names {
    ($ty:ty { $($variant:path => $name:literal),* $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),* }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)*
                    _ => Err(Error::Parse(format!("unknown {} `{s}`", stringify!($ty).to_lowercase()))),
                }
            }
        }
    };
}

names!(Case { Case::Case1 => "case1", Case::Case2 => "case2", Case::Case3 => "case3", Case::Case4 => "case4" });
names!(Priority { Priority::None => "none", Priority::Medium => "medium", Priority::High => "high" });
names!(Response {
    Response::None => "none",
    Response::PauseWorkload => "pause_workload",
    Response::AlarmHigh => "alarm_high",
    Response::AlarmMedium => "alarm_medium",
    Response::ResumeWorkload => "resume_workload",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Step1,
    Step2,
}

names!(Stage { Stage::Step1 => "step1", Stage::Step2 => "step2" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Normal,
    Anomaly,
    Classified(Case),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Normal => f.write_str("normal"),
            Verdict::Anomaly => f.write_str("anomaly"),
            Verdict::Classified(c) => c.fmt(f),
        }
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Verdict::Normal),
            "anomaly" => Ok(Verdict::Anomaly),
            other => other.parse().map(Verdict::Classified),
        }
    }
}

/// One decision. Scores are the normal-detector scores over the window for
/// step 1 and the attack-detector scores for step 2.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    pub t_ms: f64,
    pub stage: Stage,
    pub verdict: Verdict,
    pub priority: Priority,
    pub response: Response,
    pub score_min: f64,
    pub score_max: f64,
}

impl DetectionEvent {
    fn step1(t_ms: f64, anomaly: bool, scores: impl Iterator<Item = f64>) -> Self {
        let (score_min, score_max) = min_max(scores);
        let (verdict, response) =
            if anomaly { (Verdict::Anomaly, Response::PauseWorkload) } else { (Verdict::Normal, Response::None) };
        Self { t_ms, stage: Stage::Step1, verdict, priority: Priority::None, response, score_min, score_max }
    }

    fn step2(t_ms: f64, case: Case, scores: impl Iterator<Item = f64>) -> Self {
        let (score_min, score_max) = min_max(scores);
        Self {
            t_ms,
            stage: Stage::Step2,
            verdict: Verdict::Classified(case),
            priority: case.priority(),
            response: case.response(),
            score_min,
            score_max,
        }
    }

    pub fn case(&self) -> Option<Case> {
        match self.verdict {
            Verdict::Classified(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_anomaly(&self) -> bool {
        self.verdict == Verdict::Anomaly
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// `t_ms stage verdict priority response score_min score_max`
impl fmt::Display for DetectionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.t_ms, self.stage, self.verdict, self.priority, self.response, self.score_min, self.score_max
        )
    }
}

impl FromStr for DetectionEvent {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!("event line needs 7 fields, got {}: `{line}`", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}` in event line")));
        Ok(Self {
            t_ms: num(fields[0])?,
            stage: fields[1].parse()?,
            verdict: fields[2].parse()?,
            priority: fields[3].parse()?,
            response: fields[4].parse()?,
            score_min: num(fields[5])?,
            score_max: num(fields[6])?,
        })
    }
}

/// The three calibrated detectors.
#[derive(Debug, Clone)]
pub struct Detectors {
    pub normal: KdeDetector,
    pub attack: KdeDetector,
    pub benign: KdeDetector,
}

impl Detectors {
    /// Checks thresholds and that every detector matches the model's
    /// dimension.
    pub fn validate(&self, model: &dyn SequencePredictor) -> Result<()> {
        for det in [&self.normal, &self.attack, &self.benign] {
            det.require_threshold()?;
            if det.dim() != model.input_dim() {
                return Err(Error::SchemaMismatch(format!(
                    "{} profile has dimension {}, model has {}",
                    det.kind(),
                    det.dim(),
                    model.input_dim()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Monitoring,
    PausedForStep2,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Monitoring => "monitoring",
            Mode::PausedForStep2 => "paused_for_step2",
        }
    }
}

/// Per-sample step-2 decisions and the resulting case.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2Votes {
    pub attack_scores: Vec<f64>,
    pub attack_yes: usize,
    pub benign_yes: usize,
}

impl Step2Votes {
    /// Strict majority of the window's per-sample decisions.
    pub fn case(&self) -> Case {
        let w = self.attack_scores.len();
        Case::from_votes(2 * self.attack_yes > w, 2 * self.benign_yes > w)
    }
}

/// Scores `samples` against the attack and benign detectors; each sample is
/// predicted from the `L` samples before it (`context` then earlier window
/// samples).
pub fn step2_votes(
    model: &dyn SequencePredictor,
    detectors: &Detectors,
    context: &[BehaviorSample],
    samples: &[BehaviorSample],
) -> Result<Step2Votes> {
    let l = model.history_len();
    if context.len() != l {
        return Err(Error::InvalidArgument(format!("step 2 needs {l} context samples, got {}", context.len())));
    }
    let theta_a = detectors.attack.require_threshold()?;
    let theta_b = detectors.benign.require_threshold()?;
    let all: Vec<BehaviorSample> = context.iter().chain(samples).cloned().collect();
    let mut votes = Step2Votes { attack_scores: Vec::with_capacity(samples.len()), attack_yes: 0, benign_yes: 0 };
    for j in 0..samples.len() {
        let red = red_at(model, &all[j..j + l], &all[j + l])?;
        let sa = detectors.attack.score(&red.e);
        votes.attack_scores.push(sa);
        votes.attack_yes += usize::from(sa <= theta_a);
        votes.benign_yes += usize::from(detectors.benign.score(&red.e) <= theta_b);
    }
    Ok(votes)
}

/// The streaming state machine for one monitored core.
pub struct Engine<'a> {
    model: &'a dyn SequencePredictor,
    detectors: &'a Detectors,
    cfg: EngineConfig,
    theta_n: f64,
    mode: Mode,
    history: VecDeque<BehaviorSample>,
    flags: VecDeque<(bool, f64)>,
    /// Set once an anomaly event fires; cleared by the next normal flag.
    latched: bool,
    paused_at: Option<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a dyn SequencePredictor, detectors: &'a Detectors, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        detectors.validate(model)?;
        let theta_n = detectors.normal.require_threshold()?;
        Ok(Self {
            model,
            detectors,
            theta_n,
            history: VecDeque::with_capacity(model.history_len() + 1),
            flags: VecDeque::with_capacity(cfg.window + 1),
            cfg,
            mode: Mode::Monitoring,
            latched: false,
            paused_at: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Timestamp of the anomaly that paused the workload.
    pub fn paused_at(&self) -> Option<f64> {
        self.paused_at
    }

    fn expect_mode(&self, expected: Mode) -> Result<()> {
        if self.mode != expected {
            return Err(Error::WrongMode { expected: expected.name(), actual: self.mode.name() });
        }
        Ok(())
    }

    /// Feeds one monitored sample. Returns an anomaly event when the last `w`
    /// flags are all anomalous, once per contiguous anomalous run.
    pub fn step1_ingest(&mut self, sample: &BehaviorSample) -> Result<Option<DetectionEvent>> {
        self.expect_mode(Mode::Monitoring)?;
        let l = self.model.history_len();
        if self.history.len() < l {
            self.history.push_back(sample.clone());
            return Ok(None);
        }
        let history: Vec<BehaviorSample> = self.history.iter().cloned().collect();
        let red = red_at(self.model, &history, sample)?;
        let score = self.detectors.normal.score(&red.e);
        let flagged = score > self.theta_n;
        self.history.pop_front();
        self.history.push_back(sample.clone());
        self.flags.push_back((flagged, score));
        if self.flags.len() > self.cfg.window {
            self.flags.pop_front();
        }
        if !flagged {
            self.latched = false;
            return Ok(None);
        }
        if self.latched || self.flags.len() < self.cfg.window || !self.flags.iter().all(|f| f.0) {
            return Ok(None);
        }
        self.latched = true;
        self.mode = Mode::PausedForStep2;
        self.paused_at = Some(sample.t_ms);
        Ok(Some(DetectionEvent::step1(sample.t_ms, true, self.flags.iter().map(|f| f.1))))
    }

    /// Classifies the `w` samples observed while the workload is paused.
    /// `context` holds the `L` samples preceding them from the same source.
    /// Monitoring restarts afterwards with an empty history.
    pub fn step2_classify(&mut self, context: &[BehaviorSample], samples: &[BehaviorSample]) -> Result<DetectionEvent> {
        self.expect_mode(Mode::PausedForStep2)?;
        if samples.len() != self.cfg.window {
            return Err(Error::InvalidArgument(format!(
                "step 2 needs {} samples, got {}",
                self.cfg.window,
                samples.len()
            )));
        }
        let votes = step2_votes(self.model, self.detectors, context, samples)?;
        let t = samples.last().expect("window is non-empty").t_ms;
        let event = DetectionEvent::step2(t, votes.case(), votes.attack_scores.iter().copied());
        self.mode = Mode::Monitoring;
        self.paused_at = None;
        self.history.clear();
        self.flags.clear();
        Ok(event)
    }
}

/// Replays `main` through an engine. Step-2 samples come from `continuation`
/// (the same scenario with the workload switched off, aligned by index) or,
/// without one, from `main` itself: after an anomaly at index `i` they are
/// indices `i+1+g ..= i+g+w` (`g` = pause gap in samples), shifted back to
/// the last `w` samples if the source ends first. Monitoring resumes after
/// them.
pub fn run_offline(
    main: &Trace,
    continuation: Option<&Trace>,
    model: &dyn SequencePredictor,
    detectors: &Detectors,
    cfg: &EngineConfig,
) -> Result<Vec<DetectionEvent>> {
    let mut engine = Engine::new(model, detectors, cfg.clone())?;
    let source = continuation.unwrap_or(main);
    let (l, w, g) = (model.history_len(), cfg.window, cfg.pause_gap_samples());
    if source.len() < l + w {
        return Err(Error::TooShort(format!(
            "step-2 source has {} samples, needs history {l} plus window {w}",
            source.len()
        )));
    }
    let samples = main.samples();
    let src = source.samples();
    let mut events = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if let Some(event) = engine.step1_ingest(&samples[i])? {
            events.push(event);
            let start = (i + 1 + g).max(l).min(src.len() - w);
            let step2 = engine.step2_classify(&src[start - l..start], &src[start..start + w])?;
            events.push(step2);
            i += g + w + 1;
            continue;
        }
        i += 1;
    }
    Ok(events)
}

/// Per-sample scores for one scenario, computed once and reused across
/// window sizes. Index `k` is the `k`-th sample after the history warmup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScores {
    pub t_ms: Vec<f64>,
    pub normal: Vec<f64>,
    pub attack: Vec<f64>,
    pub benign: Vec<f64>,
}

/// Per-sample attack and benign scores of a step-2 source.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2Scores {
    pub attack: Vec<f64>,
    pub benign: Vec<f64>,
}

impl Step2Scores {
    pub fn from_red(detectors: &Detectors, red: &RedSet) -> Self {
        Self {
            attack: red.vectors().map(|e| detectors.attack.score(e)).collect(),
            benign: red.vectors().map(|e| detectors.benign.score(e)).collect(),
        }
    }

    pub fn compute(model: &dyn SequencePredictor, detectors: &Detectors, source: &Trace) -> Result<Self> {
        Ok(Self::from_red(detectors, &compute_red(model, source)?))
    }
}

impl ScenarioScores {
    pub fn from_parts(main_red: &RedSet, detectors: &Detectors, step2: &Step2Scores) -> Result<Self> {
        if step2.attack.len() < main_red.len() {
            return Err(Error::TooShort(format!(
                "step-2 source yields {} errors, main trace {}",
                step2.attack.len(),
                main_red.len()
            )));
        }
        let n = main_red.len();
        Ok(Self {
            t_ms: main_red.samples().iter().map(|s| s.t_ms).collect(),
            normal: main_red.vectors().map(|e| detectors.normal.score(e)).collect(),
            attack: step2.attack[..n].to_vec(),
            benign: step2.benign[..n].to_vec(),
        })
    }

    pub fn compute(
        model: &dyn SequencePredictor,
        detectors: &Detectors,
        main: &Trace,
        continuation: &Trace,
    ) -> Result<Self> {
        let step2 = Step2Scores::compute(model, detectors, continuation)?;
        Self::from_parts(&compute_red(model, main)?, detectors, &step2)
    }

    pub fn len(&self) -> usize {
        self.normal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normal.is_empty()
    }
}

/// Windowed evaluation: non-overlapping windows of `w` samples each get a
/// step-1 verdict (anomaly iff every sample scores above the normal
/// threshold); each anomaly is followed by a step-2 verdict from the
/// continuation scores at the same indices. A trailing partial window is
/// dropped.
pub fn decide_windows(scores: &ScenarioScores, detectors: &Detectors, w: usize) -> Result<Vec<DetectionEvent>> {
    if w == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let theta_n = detectors.normal.require_threshold()?;
    let theta_a = detectors.attack.require_threshold()?;
    let theta_b = detectors.benign.require_threshold()?;
    let mut events = Vec::with_capacity(2 * scores.len() / w);
    for start in (0..scores.len() / w).map(|k| k * w) {
        let range = start..start + w;
        let t = scores.t_ms[start + w - 1];
        let anomaly = scores.normal[range.clone()].iter().all(|s| *s > theta_n);
        events.push(DetectionEvent::step1(t, anomaly, scores.normal[range.clone()].iter().copied()));
        if anomaly {
            let votes = Step2Votes {
                attack_scores: scores.attack[range.clone()].to_vec(),
                attack_yes: scores.attack[range.clone()].iter().filter(|s| **s <= theta_a).count(),
                benign_yes: scores.benign[range].iter().filter(|s| **s <= theta_b).count(),
            };
            events.push(DetectionEvent::step2(t, votes.case(), votes.attack_scores.iter().copied()));
        }
    }
    Ok(events)
}

/// Computes scores and decides windows in one call.
pub fn classify_windows(
    main: &Trace,
    continuation: &Trace,
    model: &dyn SequencePredictor,
    detectors: &Detectors,
    w: usize,
) -> Result<Vec<DetectionEvent>> {
    decide_windows(&ScenarioScores::compute(model, detectors, main, continuation)?, detectors, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{LstmModel, Normalizer};
    use crate::red::{DetectorKind, RedSet};
    use crate::trace::{ScenarioLabel, TraceSource, NUM_EVENTS};

    /// A model that always predicts zero in normalized units, so the error
    /// is the sample itself (identity normalization).
    fn zero_model(l: usize) -> LstmModel {
        LstmModel::zeros(NUM_EVENTS, 2, l, Normalizer::identity(NUM_EVENTS))
    }

    fn detector(kind: DetectorKind, center: f64, threshold: f64) -> KdeDetector {
        let set = RedSet::from_vectors(NUM_EVENTS, vec![vec![center; NUM_EVENTS]], "t").unwrap();
        KdeDetector::build(kind, &set, 1.0).unwrap().with_threshold(threshold).unwrap()
    }

    /// Normal errors sit at 0, attacks at 10, benign programs at 20. A
    /// threshold of 30 accepts anything within about 2 units per event.
    fn detectors() -> Detectors {
        Detectors {
            normal: detector(DetectorKind::NormalWorkload, 0.0, 30.0),
            attack: detector(DetectorKind::KnownAttack, 10.0, 30.0),
            benign: detector(DetectorKind::BenignProgram, 20.0, 30.0),
        }
    }

    fn sample(i: usize, v: f64) -> BehaviorSample {
        BehaviorSample::new(i as f64 * 10.0, [v; NUM_EVENTS])
    }

    fn trace(values: &[f64]) -> Trace {
        let samples = values.iter().enumerate().map(|(i, v)| sample(i, *v)).collect();
        Trace::new(samples, 10.0, ScenarioLabel::default(), TraceSource::Derived("test".into())).unwrap()
    }

    #[test]
    fn latency_rows() {
        let expected = [
            (1, 10.78, 32.38),
            (5, 50.78, 112.38),
            (10, 100.79, 212.41),
            (50, 500.80, 1012.44),
            (100, 1000.81, 2012.48),
        ];
        for (w, quiet, attack) in expected {
            let cfg = EngineConfig::published(w);
            assert!((latency_model(&cfg, false) - quiet).abs() < 1e-9);
            assert!((latency_model(&cfg, true) - attack).abs() < 1e-9);
        }
    }

    #[test]
    fn case_table() {
        assert_eq!(Case::from_votes(true, true), Case::Case1);
        assert_eq!(Case::from_votes(true, false), Case::Case2);
        assert_eq!(Case::from_votes(false, true), Case::Case3);
        assert_eq!(Case::from_votes(false, false), Case::Case4);
        assert_eq!(Case::Case3.response(), Response::ResumeWorkload);
        assert_eq!(Case::Case4.priority(), Priority::Medium);
        assert_eq!(Case::Case1.priority(), Priority::High);
    }

    #[test]
    fn event_lines_round_trip() {
        let e = DetectionEvent::step2(1234.5, Case::Case4, [1.5, 0.25].into_iter());
        let line = e.to_string();
        assert_eq!(line, "1234.5 step2 case4 medium alarm_medium 0.25 1.5");
        assert_eq!(line.parse::<DetectionEvent>().unwrap(), e);
        assert!("1 step1 maybe none none 0 0".parse::<DetectionEvent>().is_err());
    }

    fn run_flags(flags: &[bool], w: usize) -> Vec<Option<usize>> {
        let model = zero_model(1);
        let dets = detectors();
        let cfg = EngineConfig { window: w, ..EngineConfig::default() };
        let mut engine = Engine::new(&model, &dets, cfg).unwrap();
        let mut out = Vec::new();
        engine.step1_ingest(&sample(0, 0.0)).unwrap();
        for (i, f) in flags.iter().enumerate() {
            let v = if *f { 10.0 } else { 0.0 };
            let e = engine.step1_ingest(&sample(i + 1, v)).unwrap();
            out.push(e.map(|_| i));
            if engine.mode() == Mode::PausedForStep2 {
                break;
            }
        }
        out
    }

    #[test]
    fn window_rule() {
        assert_eq!(run_flags(&[true], 1), vec![Some(0)]);
        let broken = run_flags(&[true, true, true, false, true], 5);
        assert!(broken.iter().all(Option::is_none));
        let full = run_flags(&[true; 5], 5);
        assert_eq!(full.last().unwrap(), &Some(4));
        assert!(full[..4].iter().all(Option::is_none));
    }

    #[test]
    fn mode_machine() {
        let model = zero_model(1);
        let dets = detectors();
        let mut engine = Engine::new(&model, &dets, EngineConfig { window: 1, ..EngineConfig::default() }).unwrap();
        assert!(matches!(engine.step2_classify(&[sample(0, 0.0)], &[sample(1, 10.0)]), Err(Error::WrongMode { .. })));
        engine.step1_ingest(&sample(0, 0.0)).unwrap();
        assert!(engine.step1_ingest(&sample(1, 10.0)).unwrap().is_some());
        assert!(matches!(engine.step1_ingest(&sample(2, 10.0)), Err(Error::WrongMode { .. })));
        assert!(engine.step2_classify(&[sample(1, 10.0)], &[sample(2, 10.0), sample(3, 10.0)]).is_err());
        let e = engine.step2_classify(&[sample(1, 10.0)], &[sample(2, 20.0)]).unwrap();
        assert_eq!(e.case(), Some(Case::Case3));
        assert_eq!(engine.mode(), Mode::Monitoring);
    }

    #[test]
    fn latch_holds_until_a_normal_flag() {
        let model = zero_model(1);
        let dets = detectors();
        let mut engine = Engine::new(&model, &dets, EngineConfig { window: 1, ..EngineConfig::default() }).unwrap();
        engine.step1_ingest(&sample(0, 0.0)).unwrap();
        assert!(engine.step1_ingest(&sample(1, 10.0)).unwrap().is_some());
        engine.step2_classify(&[sample(1, 10.0)], &[sample(2, 10.0)]).unwrap();
        engine.step1_ingest(&sample(3, 10.0)).unwrap();
        assert!(engine.step1_ingest(&sample(4, 10.0)).unwrap().is_none());
        assert!(engine.step1_ingest(&sample(5, 0.0)).unwrap().is_none());
        assert!(engine.step1_ingest(&sample(6, 10.0)).unwrap().is_some());
    }

    #[test]
    fn offline_replay() {
        let model = zero_model(2);
        let dets = detectors();
        let cfg = EngineConfig { window: 3, ..EngineConfig::default() };
        let quiet = trace(&[0.0; 40]);
        assert!(run_offline(&quiet, None, &model, &dets, &cfg).unwrap().is_empty());

        let mut values = vec![0.0; 40];
        values[10..30].iter_mut().for_each(|v| *v = 10.0);
        let attacked = trace(&values);
        let events = run_offline(&attacked, None, &model, &dets, &cfg).unwrap();
        assert!(!events.is_empty());
        for pair in events.chunks(2) {
            assert!(pair[0].is_anomaly());
            assert!(matches!(pair[1].case(), Some(Case::Case1 | Case::Case2)));
        }
        assert_eq!(events, run_offline(&attacked, None, &model, &dets, &cfg).unwrap());
    }

    #[test]
    fn windows_use_continuation_scores() {
        let model = zero_model(1);
        let dets = detectors();
        let main = trace(&[0.0, 0.0, 0.0, 10.0, 10.0, 0.0, 0.0]);
        let cont = trace(&[20.0; 7]);
        let events = classify_windows(&main, &cont, &model, &dets, 2).unwrap();
        let verdicts: Vec<String> = events.iter().map(|e| e.verdict.to_string()).collect();
        assert_eq!(verdicts, ["normal", "anomaly", "case3", "normal"]);
        assert_eq!(events[1].t_ms, 40.0);
    }
}
