//! Desk-scale evaluation: scenario matrices, error rates, window sweeps and
//! the zero-day holdout.
//!
//! Every scenario trace is split into equal train, validation and test
//! thirds. The predictor and the normal-workload distribution come from the
//! train thirds of the workload-only traces; the benign and attack
//! distributions from the train thirds of step-2 traces (the paused core:
//! background activity plus the perturbation). Rates are measured on the
//! test thirds, with step-2 decisions drawn from the matching step-2 trace
//! aligned by index. Aggregate rates are unweighted means over scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::engine::{
    decide_windows, latency_model, Case, DetectionEvent, Detectors, EngineConfig, ScenarioScores, Stage, Step2Scores,
};
use crate::error::{Error, Result};
use crate::predictor::{train, LstmModel, SequencePredictor, TrainConfig, TrainReport};
use crate::red::{compute_red, evaluator, profile_normal, profile_step2, scores, KdeDetector, ProfileOptions, RedSet};
use crate::synth::{generate_with_interval, PerturbSpec, ScenarioCatalog, WorkloadSpec};
use crate::trace::{split_equal, Trace, DEFAULT_INTERVAL_MS};

/// A labeled half-open time span `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthInterval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub attack: bool,
}

/// Non-overlapping labeled intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    intervals: Vec<TruthInterval>,
}

impl GroundTruth {
    pub fn new(mut intervals: Vec<TruthInterval>) -> Result<Self> {
        if intervals.iter().any(|i| !(i.start_ms < i.end_ms)) {
            return Err(Error::InvalidArgument("truth interval with start >= end".into()));
        }
        intervals.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
        if intervals.windows(2).any(|w| w[1].start_ms < w[0].end_ms) {
            return Err(Error::InvalidArgument("overlapping truth intervals".into()));
        }
        Ok(Self { intervals })
    }

    /// One label over `[start_ms, end_ms)`.
    pub fn constant(start_ms: f64, end_ms: f64, attack: bool) -> Result<Self> {
        Self::new(vec![TruthInterval { start_ms, end_ms, attack }])
    }

    /// Covers a whole trace with one label.
    pub fn for_trace(trace: &Trace, attack: bool) -> Result<Self> {
        let first = trace.samples().first().ok_or_else(|| Error::Empty("trace".into()))?.t_ms;
        let last = trace.samples().last().expect("non-empty").t_ms;
        Self::constant(first, last + trace.interval_ms(), attack)
    }

    pub fn is_attack_at(&self, t_ms: f64) -> Result<bool> {
        let idx = self.intervals.partition_point(|i| i.end_ms <= t_ms);
        match self.intervals.get(idx) {
            Some(i) if i.start_ms <= t_ms => Ok(i.attack),
            _ => Err(Error::UncoveredTimestamp(t_ms)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    /// `FP / (FP + TN)`, if there are attack-free windows.
    pub fn fpr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.fp as f64 / self.negatives() as f64)
    }

    /// `FN / (FN + TP)`, if there are attack windows.
    pub fn fnr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.fn_ as f64 / self.positives() as f64)
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }
}

/// Scores windowed decisions against ground truth. Each step-1 event closes
/// a window of `w` samples ending at its timestamp; the window is an attack
/// window if any of its samples falls in an attack interval. A window is
/// flagged if step 1 found an anomaly that step 2 did not resolve as
/// benign (Case 3).
pub fn compute_rates(
    events: &[DetectionEvent],
    truth: &GroundTruth,
    w: usize,
    interval_ms: f64,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for (k, e) in events.iter().enumerate() {
        if e.stage != Stage::Step1 {
            continue;
        }
        let mut attack = false;
        for j in 0..w {
            attack |= truth.is_attack_at(e.t_ms - j as f64 * interval_ms)?;
        }
        let resolved = events.get(k + 1).and_then(DetectionEvent::case) == Some(Case::Case3);
        let flagged = e.is_anomaly() && !resolved;
        match (attack, flagged) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fn_ += 1,
            (false, true) => counts.fp += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Derives a per-scenario seed from the experiment seed and a name.
pub fn scenario_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageCosts {
    /// Per-window costs measured on the reference hardware.
    Published,
    /// Mean costs timed during this run.
    Measured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub samples_per_scenario: usize,
    pub interval_ms: f64,
    pub train: TrainConfig,
    /// Fraction of normal validation errors accepted by the normal detector.
    pub coverage: f64,
    pub bandwidth: String,
    pub evaluator: String,
    /// Reference sets are thinned by a fixed stride to at most this many
    /// samples; 0 keeps everything.
    pub max_reference: usize,
    pub windows: Vec<usize>,
    pub primary_window: usize,
    /// Benign programs run together with every attack.
    pub mixed_benign: Vec<String>,
    /// Attacks known to the zero-day detectors; the rest are held out.
    pub zero_day_known: Vec<String>,
    pub workloads: Option<Vec<String>>,
    pub stage_costs: StageCosts,
}

impl ExperimentConfig {
    pub fn profile_options(&self) -> ProfileOptions {
        ProfileOptions {
            coverage: self.coverage,
            bandwidth: self.bandwidth.clone(),
            evaluator: self.evaluator.clone(),
            max_reference: self.max_reference,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples_per_scenario: 3000,
            interval_ms: DEFAULT_INTERVAL_MS,
            train: TrainConfig::default(),
            coverage: 0.80,
            bandwidth: "scott".into(),
            evaluator: "exact".into(),
            max_reference: 2000,
            windows: vec![1, 5, 10, 50, 100, 200],
            primary_window: 5,
            mixed_benign: ["gpg_rsa", "gcc", "libquantum"].map(String::from).to_vec(),
            zero_day_known: ["l1pp", "l3pp", "spectre_v1", "spectre_v2", "buffer_overflow"].map(String::from).to_vec(),
            workloads: None,
            stage_costs: StageCosts::Published,
        }
    }
}

/// What runs on the core besides the workload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Perturbation {
    pub benign: Option<String>,
    pub attack: Option<String>,
}

impl Perturbation {
    pub fn name(&self) -> String {
        match (&self.benign, &self.attack) {
            (None, None) => "alone".into(),
            (Some(b), None) => b.clone(),
            (None, Some(a)) => a.clone(),
            (Some(b), Some(a)) => format!("{b}+{a}"),
        }
    }

    fn specs<'c>(&self, catalog: &'c ScenarioCatalog) -> Result<Vec<&'c PerturbSpec>> {
        let mut out = Vec::new();
        if let Some(b) = &self.benign {
            out.push(catalog.benign(b).ok_or_else(|| Error::InvalidArgument(format!("unknown benign program `{b}`")))?);
        }
        if let Some(a) = &self.attack {
            out.push(catalog.attack(a).ok_or_else(|| Error::InvalidArgument(format!("unknown attack `{a}`")))?);
        }
        Ok(out)
    }

    /// The scenario groups used in reports.
    pub fn group(&self) -> &'static str {
        match (&self.benign, &self.attack) {
            (None, None) => "alone",
            (Some(_), None) => "benign",
            (None, Some(_)) => "attack",
            (Some(_), Some(_)) => "attack+benign",
        }
    }
}

/// The full perturbation matrix: nothing, each benign program, each attack,
/// and each attack with each mixed benign program.
pub fn perturbation_matrix(catalog: &ScenarioCatalog, mixed_benign: &[String]) -> Vec<Perturbation> {
    let mut out = vec![Perturbation { benign: None, attack: None }];
    out.extend(catalog.benign.iter().map(|b| Perturbation { benign: Some(b.name.clone()), attack: None }));
    out.extend(catalog.attacks.iter().map(|a| Perturbation { benign: None, attack: Some(a.name.clone()) }));
    for b in mixed_benign {
        out.extend(
            catalog.attacks.iter().map(|a| Perturbation { benign: Some(b.clone()), attack: Some(a.name.clone()) }),
        );
    }
    out
}

fn generate_split(
    workload: &WorkloadSpec,
    perturb: &[&PerturbSpec],
    cfg: &ExperimentConfig,
    name: &str,
) -> Result<(Trace, Trace, Trace)> {
    let owned: Vec<PerturbSpec> = perturb.iter().map(|p| (*p).clone()).collect();
    let trace = generate_with_interval(
        Some(workload),
        &owned,
        cfg.samples_per_scenario,
        scenario_seed(cfg.seed, name),
        cfg.interval_ms,
    )?;
    split_equal(&trace)
}

/// Errors of the three thirds of one step-2 source.
#[derive(Debug, Clone)]
struct Step2Source {
    perturb: Perturbation,
    train: RedSet,
    val: RedSet,
    test: RedSet,
}

/// A workload scenario's test-third errors.
#[derive(Debug, Clone)]
struct MainScenario {
    workload: String,
    perturb: Perturbation,
    /// Index into the step-2 sources.
    source: usize,
    test: RedSet,
    interval_ms: f64,
}

impl MainScenario {
    fn name(&self) -> String {
        format!("{}+{}", self.workload, self.perturb.name())
    }

    fn truth(&self) -> Result<GroundTruth> {
        let first = self.test.samples().first().ok_or_else(|| Error::Empty(self.name()))?.t_ms;
        let last = self.test.samples().last().expect("non-empty").t_ms;
        GroundTruth::constant(first, last + self.interval_ms, self.perturb.attack.is_some())
    }
}

/// Mean wall-clock cost of each stage, in ms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeasuredCosts {
    pub t_red_ms: f64,
    pub t_kde1_ms: f64,
    pub t_kde2_ms: f64,
}

/// Trained model, prepared errors and the normal detector; step-2 detectors
/// are built on demand so that different known-attack sets can be compared.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub model: LstmModel,
    pub train_report: TrainReport,
    pub normal: KdeDetector,
    sources: Vec<Step2Source>,
    scenarios: Vec<MainScenario>,
    normal_scores: Vec<Vec<f64>>,
    pub measured: MeasuredCosts,
}

fn ms_since(start: Instant, count: usize) -> f64 {
    start.elapsed().as_secs_f64() * 1e3 / count.max(1) as f64
}

impl Pipeline {
    /// Generates every trace, trains the predictor and builds the normal
    /// detector.
    pub fn prepare(catalog: &ScenarioCatalog, cfg: ExperimentConfig) -> Result<Self> {
        catalog.validate()?;
        evaluator(&cfg.evaluator)?;
        let workloads: Vec<&WorkloadSpec> = match &cfg.workloads {
            None => catalog.workloads.iter().collect(),
            Some(names) => names
                .iter()
                .map(|n| catalog.workload(n).ok_or_else(|| Error::InvalidArgument(format!("unknown workload `{n}`"))))
                .collect::<Result<_>>()?,
        };
        if workloads.is_empty() {
            return Err(Error::Empty("no workloads selected".into()));
        }
        for name in cfg.mixed_benign.iter() {
            catalog.benign(name).ok_or_else(|| Error::InvalidArgument(format!("unknown benign program `{name}`")))?;
        }

        // Workload-only traces train the predictor and the normal detector.
        let alone: Vec<(Trace, Trace, Trace)> = workloads
            .par_iter()
            .map(|w| generate_split(w, &[], &cfg, &format!("{}+alone", w.name)))
            .collect::<Result<_>>()?;
        let train_refs: Vec<&Trace> = alone.iter().map(|t| &t.0).collect();
        log::info!("training predictor on {} workload traces", train_refs.len());
        let (model, train_report) = train(&train_refs, &cfg.train)?;

        let red_start = Instant::now();
        let normal_train: Vec<RedSet> = alone.par_iter().map(|t| compute_red(&model, &t.0)).collect::<Result<_>>()?;
        let red_count: usize = normal_train.iter().map(RedSet::len).sum();
        let t_red_ms = ms_since(red_start, red_count);
        let normal_val: Vec<RedSet> = alone.par_iter().map(|t| compute_red(&model, &t.1)).collect::<Result<_>>()?;
        let normal_val_refs: Vec<&RedSet> = normal_val.iter().collect();
        let normal =
            profile_normal(&normal_train.iter().collect::<Vec<_>>(), &normal_val_refs, &cfg.profile_options())?;
        let kde_start = Instant::now();
        let val_queries: usize = normal_val_refs.iter().map(|v| scores(&normal, v).len()).sum();
        let t_kde1_ms = ms_since(kde_start, val_queries);

        let matrix = perturbation_matrix(catalog, &cfg.mixed_benign);
        let sources: Vec<Step2Source> = matrix
            .par_iter()
            .map(|p| {
                let specs = p.specs(catalog)?;
                let name = format!("{}+{}", catalog.background.name, p.name());
                let (tr, va, te) = generate_split(&catalog.background, &specs, &cfg, &name)?;
                Ok(Step2Source {
                    perturb: p.clone(),
                    train: compute_red(&model, &tr)?,
                    val: compute_red(&model, &va)?,
                    test: compute_red(&model, &te)?,
                })
            })
            .collect::<Result<_>>()?;

        let jobs: Vec<(&WorkloadSpec, usize)> =
            workloads.iter().flat_map(|w| (0..matrix.len()).map(move |k| (*w, k))).collect();
        let scenarios: Vec<MainScenario> = jobs
            .par_iter()
            .map(|(w, k)| {
                let p = &matrix[*k];
                let name = format!("{}+{}", w.name, p.name());
                let test = if p.benign.is_none() && p.attack.is_none() {
                    let idx = workloads.iter().position(|x| x.name == w.name).expect("selected workload");
                    alone[idx].2.clone()
                } else {
                    generate_split(w, &p.specs(catalog)?, &cfg, &name)?.2
                };
                Ok(MainScenario {
                    workload: w.name.clone(),
                    perturb: p.clone(),
                    source: *k,
                    test: compute_red(&model, &test)?,
                    interval_ms: test.interval_ms(),
                })
            })
            .collect::<Result<_>>()?;
        let normal_scores: Vec<Vec<f64>> =
            scenarios.par_iter().map(|s| s.test.vectors().map(|e| normal.score(e)).collect()).collect();

        Ok(Self {
            cfg,
            model,
            train_report,
            normal,
            sources,
            scenarios,
            normal_scores,
            measured: MeasuredCosts { t_red_ms, t_kde1_ms, t_kde2_ms: 0.0 },
        })
    }

    /// Attack and benign detectors. The attack distribution uses the
    /// attack-only sources of `known` attacks; each threshold is the
    /// equal-error point against the opposite class's validation errors.
    pub fn step2_detectors(&self, known: &[String]) -> Result<Detectors> {
        if known.is_empty() {
            return Err(Error::Empty("known attack set".into()));
        }
        let known: BTreeSet<&str> = known.iter().map(String::as_str).collect();
        let attack_src: Vec<&Step2Source> = self
            .sources
            .iter()
            .filter(|s| s.perturb.benign.is_none() && s.perturb.attack.as_deref().is_some_and(|a| known.contains(a)))
            .collect();
        if attack_src.len() != known.len() {
            return Err(Error::InvalidArgument(format!("known attacks {known:?} are not all in the catalog")));
        }
        let benign_src: Vec<&Step2Source> =
            self.sources.iter().filter(|s| s.perturb.attack.is_none() && s.perturb.benign.is_some()).collect();
        if benign_src.is_empty() {
            return Err(Error::Empty("benign programs".into()));
        }
        let (attack, benign) = profile_step2(
            &attack_src.iter().map(|s| &s.train).collect::<Vec<_>>(),
            &attack_src.iter().map(|s| &s.val).collect::<Vec<_>>(),
            &benign_src.iter().map(|s| &s.train).collect::<Vec<_>>(),
            &benign_src.iter().map(|s| &s.val).collect::<Vec<_>>(),
            &self.cfg.profile_options(),
        )?;
        Ok(Detectors { normal: self.normal.clone(), attack, benign })
    }

    pub fn model(&self) -> &dyn SequencePredictor {
        &self.model
    }

    /// Per-scenario scores under `detectors`, in scenario order.
    fn scenario_scores(&mut self, detectors: &Detectors) -> Result<Vec<ScenarioScores>> {
        let start = Instant::now();
        let step2: Vec<Step2Scores> =
            self.sources.par_iter().map(|s| Step2Scores::from_red(detectors, &s.test)).collect();
        let queries: usize = self.sources.iter().map(|s| s.test.len()).sum();
        self.measured.t_kde2_ms = ms_since(start, queries);
        self.scenarios
            .iter()
            .zip(&self.normal_scores)
            .map(|(s, normal)| {
                let st = &step2[s.source];
                let n = s.test.len();
                if st.attack.len() < n {
                    return Err(Error::TooShort(format!(
                        "step-2 source for {} is shorter than its test split",
                        s.name()
                    )));
                }
                Ok(ScenarioScores {
                    t_ms: s.test.samples().iter().map(|x| x.t_ms).collect(),
                    normal: normal.clone(),
                    attack: st.attack[..n].to_vec(),
                    benign: st.benign[..n].to_vec(),
                })
            })
            .collect()
    }

    /// Windowed results of every scenario for each window size.
    pub fn evaluate(&mut self, detectors: &Detectors, windows: &[usize]) -> Result<Vec<ScenarioResult>> {
        let scores = self.scenario_scores(detectors)?;
        let mut out = Vec::new();
        for &w in windows {
            for (s, sc) in self.scenarios.iter().zip(&scores) {
                let events = decide_windows(sc, detectors, w)?;
                let truth = s.truth()?;
                let counts = compute_rates(&events, &truth, w, s.interval_ms)?;
                let step1_events: Vec<DetectionEvent> =
                    events.iter().filter(|e| e.stage == Stage::Step1).cloned().collect();
                let step1 = compute_rates(&step1_events, &truth, w, s.interval_ms)?;
                let mut cases = [0usize; 4];
                for c in events.iter().filter_map(DetectionEvent::case) {
                    cases[c.number() as usize - 1] += 1;
                }
                let anomalies = events.iter().filter(|e| e.is_anomaly()).count();
                out.push(ScenarioResult {
                    workload: s.workload.clone(),
                    perturb: s.perturb.clone(),
                    window: w,
                    counts,
                    step1,
                    cases,
                    anomalies,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub workload: String,
    pub perturb: Perturbation,
    pub window: usize,
    pub counts: ConfusionCounts,
    /// Counts from step 1 alone, as if every anomaly raised an alarm.
    pub step1: ConfusionCounts,
    /// Step-2 verdicts per case.
    pub cases: [usize; 4],
    pub anomalies: usize,
}

impl ScenarioResult {
    pub fn name(&self) -> String {
        format!("{}+{}", self.workload, self.perturb.name())
    }

    pub fn has_attack(&self) -> bool {
        self.perturb.attack.is_some()
    }
}

/// Unweighted mean over scenarios of the per-scenario rate.
fn mean_rate<'r>(
    results: impl Iterator<Item = &'r ScenarioResult>,
    rate: impl Fn(&ScenarioResult) -> Option<f64>,
) -> f64 {
    let rates: Vec<f64> = results.filter_map(rate).collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub window: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub step1_fpr: f64,
    pub step1_fnr: f64,
    pub latency_ms: f64,
    pub attack_latency_ms: f64,
    /// `(workload, fpr, fnr)`.
    pub per_workload: Vec<(String, f64, f64)>,
}

/// FPR over attack-free scenarios and FNR over attack scenarios, per window.
pub fn window_sweep(results: &[ScenarioResult], costs: impl Fn(usize) -> EngineConfig) -> Vec<SweepRow> {
    let windows: BTreeSet<usize> = results.iter().map(|r| r.window).collect();
    windows
        .into_iter()
        .map(|w| {
            let at_w: Vec<&ScenarioResult> = results.iter().filter(|r| r.window == w).collect();
            let workloads: BTreeSet<&str> = at_w.iter().map(|r| r.workload.as_str()).collect();
            let per_workload = workloads
                .into_iter()
                .map(|name| {
                    let of = || at_w.iter().copied().filter(move |r| r.workload == name);
                    (
                        name.to_string(),
                        mean_rate(of().filter(|r| !r.has_attack()), |r| r.counts.fpr()),
                        mean_rate(of().filter(|r| r.has_attack()), |r| r.counts.fnr()),
                    )
                })
                .collect();
            let cfg = costs(w);
            SweepRow {
                window: w,
                fpr: mean_rate(at_w.iter().copied().filter(|r| !r.has_attack()), |r| r.counts.fpr()),
                fnr: mean_rate(at_w.iter().copied().filter(|r| r.has_attack()), |r| r.counts.fnr()),
                step1_fpr: mean_rate(at_w.iter().copied().filter(|r| !r.has_attack()), |r| r.step1.fpr()),
                step1_fnr: mean_rate(at_w.iter().copied().filter(|r| r.has_attack()), |r| r.step1.fnr()),
                latency_ms: latency_model(&cfg, false),
                attack_latency_ms: latency_model(&cfg, true),
                per_workload,
            }
        })
        .collect()
}

/// Step-2 verdict shares for one group of scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub group: String,
    pub counts: [usize; 4],
}

impl CaseRow {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn share(&self, case: Case) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.counts[case.number() as usize - 1] as f64 / total as f64
        }
    }
}

fn case_rows<'r>(
    results: impl Iterator<Item = &'r ScenarioResult>,
    key: impl Fn(&ScenarioResult) -> String,
) -> Vec<CaseRow> {
    let mut rows: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for r in results {
        let row = rows.entry(key(r)).or_default();
        for (acc, c) in row.iter_mut().zip(r.cases) {
            *acc += c;
        }
    }
    rows.into_iter().map(|(group, counts)| CaseRow { group, counts }).collect()
}

/// Share of step-1 false alarms with a benign program running that step 2
/// resolves as Case 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalseAlarmReduction {
    pub alarms: usize,
    pub resolved: usize,
}

impl FalseAlarmReduction {
    pub fn from_results<'r>(results: impl Iterator<Item = &'r ScenarioResult>) -> Self {
        let mut out = Self { alarms: 0, resolved: 0 };
        for r in results.filter(|r| r.perturb.group() == "benign") {
            out.alarms += r.anomalies;
            out.resolved += r.cases[Case::Case3.number() as usize - 1];
        }
        out
    }

    /// 1 when there were no false alarms to resolve.
    pub fn ratio(&self) -> f64 {
        if self.alarms == 0 {
            1.0
        } else {
            self.resolved as f64 / self.alarms as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroDayReport {
    pub known: Vec<String>,
    pub held_out: Vec<String>,
    /// Case counts per held-out attack, over its scenarios with and without
    /// benign programs.
    pub rows: Vec<CaseRow>,
    pub false_alarm_reduction: FalseAlarmReduction,
}

impl ZeroDayReport {
    pub fn never_case3(&self) -> bool {
        self.rows.iter().all(|r| r.counts[Case::Case3.number() as usize - 1] == 0)
    }
}

/// Rebuilds the attack detector from `known` only and classifies every
/// scenario containing a held-out attack.
pub fn zero_day_holdout(
    pipeline: &mut Pipeline,
    known: &[String],
    held_out: &[String],
    w: usize,
) -> Result<ZeroDayReport> {
    if let Some(dup) = held_out.iter().find(|h| known.contains(h)) {
        return Err(Error::InvalidArgument(format!("attack `{dup}` is both known and held out")));
    }
    let detectors = pipeline.step2_detectors(known)?;
    let results = pipeline.evaluate(&detectors, &[w])?;
    let held: BTreeSet<&str> = held_out.iter().map(String::as_str).collect();
    let rows =
        case_rows(results.iter().filter(|r| r.perturb.attack.as_deref().is_some_and(|a| held.contains(a))), |r| {
            r.perturb.attack.clone().expect("attack scenario")
        });
    Ok(ZeroDayReport {
        known: known.to_vec(),
        held_out: held_out.to_vec(),
        rows,
        false_alarm_reduction: FalseAlarmReduction::from_results(results.iter()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub primary_window: usize,
    pub train_final_mse: f64,
    pub thresholds: [f64; 3],
    /// Results at the primary window.
    pub scenarios: Vec<ScenarioResult>,
    pub sweep: Vec<SweepRow>,
    pub cases: Vec<CaseRow>,
    pub false_alarm_reduction: FalseAlarmReduction,
    pub zero_day: Option<ZeroDayReport>,
}

impl EvalReport {
    pub fn sweep_at(&self, w: usize) -> Option<&SweepRow> {
        self.sweep.iter().find(|r| r.window == w)
    }
}

/// Runs the whole desk-scale experiment.
pub fn run_experiment(catalog: &ScenarioCatalog, cfg: ExperimentConfig) -> Result<EvalReport> {
    let mut windows = cfg.windows.clone();
    if !windows.contains(&cfg.primary_window) {
        windows.push(cfg.primary_window);
    }
    windows.sort_unstable();
    if windows.contains(&0) {
        return Err(Error::InvalidArgument("window sizes must be at least 1".into()));
    }
    let primary = cfg.primary_window;
    let known_all: Vec<String> = catalog.attacks.iter().map(|a| a.name.clone()).collect();
    let zero_day_known = cfg.zero_day_known.clone();
    let mut pipeline = Pipeline::prepare(catalog, cfg)?;
    let detectors = pipeline.step2_detectors(&known_all)?;
    let results = pipeline.evaluate(&detectors, &windows)?;

    let stage_costs = pipeline.cfg.stage_costs;
    let measured = pipeline.measured;
    let interval = pipeline.cfg.interval_ms;
    let sweep = window_sweep(&results, |w| match stage_costs {
        StageCosts::Published => {
            EngineConfig { interval_ms: interval, pause_gap_ms: interval, ..EngineConfig::published(w) }
        }
        StageCosts::Measured => EngineConfig {
            window: w,
            interval_ms: interval,
            pause_gap_ms: interval,
            t_red_ms: measured.t_red_ms,
            t_kde1_ms: measured.t_kde1_ms,
            t_kde2_ms: measured.t_kde2_ms,
        },
    });
    let at_primary: Vec<ScenarioResult> = results.into_iter().filter(|r| r.window == primary).collect();
    let cases = case_rows(at_primary.iter(), |r| r.perturb.group().to_string());
    let false_alarm_reduction = FalseAlarmReduction::from_results(at_primary.iter());

    let held_out: Vec<String> = known_all.iter().filter(|a| !zero_day_known.contains(a)).cloned().collect();
    let zero_day = if zero_day_known.is_empty() {
        None
    } else {
        Some(zero_day_holdout(&mut pipeline, &zero_day_known, &held_out, primary)?)
    };

    Ok(EvalReport {
        seed: pipeline.cfg.seed,
        primary_window: primary,
        train_final_mse: pipeline.train_report.final_mse,
        thresholds: [
            detectors.normal.require_threshold()?,
            detectors.attack.require_threshold()?,
            detectors.benign.require_threshold()?,
        ],
        scenarios: at_primary,
        sweep,
        cases,
        false_alarm_reduction,
        zero_day,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl EvalReport {
    pub fn scenarios_csv(&self) -> String {
        let mut out =
            String::from("scenario,workload,benign,attack,window,tp,fn,tn,fp,fpr,fnr,case1,case2,case3,case4\n");
        for r in &self.scenarios {
            let c = &r.counts;
            let rate = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.name(),
                r.workload,
                r.perturb.benign.as_deref().unwrap_or(""),
                r.perturb.attack.as_deref().unwrap_or(""),
                r.window,
                c.tp,
                c.fn_,
                c.tn,
                c.fp,
                rate(c.fpr()),
                rate(c.fnr()),
                r.cases[0],
                r.cases[1],
                r.cases[2],
                r.cases[3]
            );
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("window,workload,fpr,fnr,step1_fpr,step1_fnr,latency_ms,attack_latency_ms\n");
        for row in &self.sweep {
            let _ = writeln!(
                out,
                "{},all,{},{},{},{},{:.2},{:.2}",
                row.window, row.fpr, row.fnr, row.step1_fpr, row.step1_fnr, row.latency_ms, row.attack_latency_ms
            );
            for (w, fpr, fnr) in &row.per_workload {
                let _ = writeln!(out, "{},{w},{fpr},{fnr},,,,", row.window);
            }
        }
        out
    }

    pub fn cases_csv(&self) -> String {
        let mut out = String::from("table,group,events,case1,case2,case3,case4\n");
        let mut rows = |table: &str, rows: &[CaseRow]| {
            for r in rows {
                let shares: Vec<String> = Case::ALL.iter().map(|c| pct(r.share(*c))).collect();
                let _ = writeln!(out, "{table},{},{},{}", r.group, r.total(), shares.join(","));
            }
        };
        rows("step2", &self.cases);
        if let Some(z) = &self.zero_day {
            rows("zero_day", &z.rows);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment seed: {}", self.seed);
        let _ = writeln!(out, "predictor final training mse: {:.6}", self.train_final_mse);
        let [n, a, b] = self.thresholds;
        let _ = writeln!(out, "thresholds: normal {n:.4}, attack {a:.4}, benign {b:.4}");
        let _ = writeln!(
            out,
            "rates are unweighted means over scenarios (FPR over attack-free, FNR over attack scenarios)"
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>8} {:>10} {:>10} {:>12} {:>12}",
            "w", "FPR%", "FNR%", "s1_FPR%", "s1_FNR%", "latency_ms", "attack_ms"
        );
        for r in &self.sweep {
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>8} {:>10} {:>10} {:>12.2} {:>12.2}",
                r.window,
                pct(r.fpr),
                pct(r.fnr),
                pct(r.step1_fpr),
                pct(r.step1_fnr),
                r.latency_ms,
                r.attack_latency_ms
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "step-2 verdicts at w={} (% of step-2 events):", self.primary_window);
        for r in &self.cases {
            let shares: Vec<String> = Case::ALL.iter().map(|c| format!("{c} {}", pct(r.share(*c)))).collect();
            let _ = writeln!(out, "  {:<14} n={:<6} {}", r.group, r.total(), shares.join("  "));
        }
        let f = &self.false_alarm_reduction;
        let _ = writeln!(out, "false alarms resolved as benign: {}/{} ({}%)", f.resolved, f.alarms, pct(f.ratio()));
        if let Some(z) = &self.zero_day {
            let _ = writeln!(out);
            let _ = writeln!(out, "zero-day holdout, known: {}", z.known.join(", "));
            for r in &z.rows {
                let shares: Vec<String> = Case::ALL.iter().map(|c| format!("{c} {}", pct(r.share(*c)))).collect();
                let _ = writeln!(out, "  {:<14} n={:<6} {}", r.group, r.total(), shares.join("  "));
            }
            let f = &z.false_alarm_reduction;
            let _ =
                writeln!(out, "  false alarms resolved as benign: {}/{} ({}%)", f.resolved, f.alarms, pct(f.ratio()));
        }
        out
    }

    /// Writes `scenarios.csv`, `sweep.csv`, `cases.csv` and `summary.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("scenarios.csv", self.scenarios_csv()),
            ("sweep.csv", self.sweep_csv()),
            ("cases.csv", self.cases_csv()),
            ("summary.txt", self.summary()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
