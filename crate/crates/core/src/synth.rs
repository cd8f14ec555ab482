//! Deterministic synthetic traces.
//!
//! A scenario is a workload's predictable component (baseline plus
//! sinusoids) with Gaussian noise, plus any number of additive
//! perturbations (benign programs or attacks) that switch on and off with a
//! duty pattern. Magnitudes in the built-in catalog are synthetic; they are
//! not measurements of real programs.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::trace::{BehaviorSample, EventId, ScenarioLabel, Trace, TraceSource, DEFAULT_INTERVAL_MS, NUM_EVENTS};

/// One sinusoidal term of an event's predictable component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicTerm {
    pub event: EventId,
    pub amplitude: f64,
    /// Period in samples.
    pub period: f64,
    /// Phase in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub baseline: [f64; NUM_EVENTS],
    pub periodic: Vec<PeriodicTerm>,
    pub noise_scale: [f64; NUM_EVENTS],
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("workload `{}`: {what}", self.name)));
        if self.baseline.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("baseline must be finite and non-negative");
        }
        if self.noise_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("noise scale must be positive");
        }
        for term in &self.periodic {
            if !(term.amplitude.is_finite() && term.amplitude >= 0.0) {
                return bad("periodic amplitude must be non-negative");
            }
            if !(term.period >= 2.0) {
                return bad("periodic period must be at least 2 samples");
            }
            if !term.phase.is_finite() {
                return bad("periodic phase must be finite");
            }
        }
        Ok(())
    }

    /// The noise-free component at sample index `t`.
    pub fn deterministic(&self, t: usize) -> [f64; NUM_EVENTS] {
        let mut v = self.baseline;
        for term in &self.periodic {
            v[term.event.index()] += term.amplitude * (TAU * t as f64 / term.period + term.phase).sin();
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbKind {
    Benign,
    Attack,
}

impl PerturbKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbKind::Benign => "benign",
            PerturbKind::Attack => "attack",
        }
    }
}

/// Run/sleep alternation. `off == 0` means always running.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duty {
    pub on: usize,
    pub off: usize,
}

impl Duty {
    pub const ALWAYS: Duty = Duty { on: 1, off: 0 };

    pub fn is_active(&self, t: usize) -> bool {
        self.off == 0 || t % (self.on + self.off) < self.on
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSpec {
    pub name: String,
    pub kind: PerturbKind,
    pub offset: [f64; NUM_EVENTS],
    pub noise_scale: [f64; NUM_EVENTS],
    pub duty: Duty,
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("perturbation `{}`: {what}", self.name)));
        if self.offset.iter().any(|v| !v.is_finite()) {
            return bad("offsets must be finite");
        }
        if self.noise_scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("extra noise must be non-negative");
        }
        if self.offset.iter().all(|&v| v == 0.0) && self.noise_scale.iter().all(|&s| s == 0.0) {
            return bad("needs a nonzero offset or extra noise");
        }
        if self.duty.on == 0 {
            return bad("duty on-phase must be at least one sample");
        }
        Ok(())
    }

    pub fn with_duty(mut self, on: usize, off: usize) -> Self {
        self.duty = Duty { on, off };
        self
    }
}

/// Generates `n_samples` frames of `workload` (if any) with every
/// perturbation added while active, clamped at zero.
pub fn generate(
    workload: Option<&WorkloadSpec>,
    perturbs: &[PerturbSpec],
    n_samples: usize,
    seed: u64,
) -> Result<Trace> {
    generate_with_interval(workload, perturbs, n_samples, seed, DEFAULT_INTERVAL_MS)
}

pub fn generate_with_interval(
    workload: Option<&WorkloadSpec>,
    perturbs: &[PerturbSpec],
    n_samples: usize,
    seed: u64,
    interval_ms: f64,
) -> Result<Trace> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if workload.is_none() && perturbs.is_empty() {
        return Err(Error::InvalidArgument("need a workload or at least one perturbation".into()));
    }
    if let Some(w) = workload {
        w.validate()?;
    }
    for p in perturbs {
        p.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for t in 0..n_samples {
        let mut v = [0.0; NUM_EVENTS];
        if let Some(w) = workload {
            v = w.deterministic(t);
            for (x, s) in v.iter_mut().zip(&w.noise_scale) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += s * z;
            }
        }
        for p in perturbs {
            // Draw unconditionally so the stream does not depend on duty.
            let mut noise = [0.0; NUM_EVENTS];
            for z in noise.iter_mut() {
                *z = StandardNormal.sample(&mut rng);
            }
            if p.duty.is_active(t) {
                for k in 0..NUM_EVENTS {
                    v[k] += p.offset[k] + p.noise_scale[k] * noise[k];
                }
            }
        }
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
        samples.push(BehaviorSample::new(t as f64 * interval_ms, v));
    }

    let mut label = ScenarioLabel { workload: workload.map(|w| w.name.clone()), ..ScenarioLabel::default() };
    for p in perturbs {
        let slot = match p.kind {
            PerturbKind::Benign => &mut label.benign,
            PerturbKind::Attack => &mut label.attack,
        };
        *slot = Some(match slot.take() {
            Some(prev) => format!("{prev}+{}", p.name),
            None => p.name.clone(),
        });
    }
    Trace::new(samples, interval_ms, label, TraceSource::Generated { seed })
}

/// Built-in scenario presets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCatalog {
    pub workloads: Vec<WorkloadSpec>,
    pub benign: Vec<PerturbSpec>,
    pub attacks: Vec<PerturbSpec>,
    /// What the core runs when the cloud workload is paused.
    pub background: WorkloadSpec,
}

impl ScenarioCatalog {
    pub fn workload(&self, name: &str) -> Option<&WorkloadSpec> {
        self.workloads.iter().find(|w| w.name == name)
    }

    pub fn benign(&self, name: &str) -> Option<&PerturbSpec> {
        self.benign.iter().find(|p| p.name == name)
    }

    pub fn attack(&self, name: &str) -> Option<&PerturbSpec> {
        self.attacks.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        for w in &self.workloads {
            w.validate()?;
        }
        for p in self.benign.iter().chain(&self.attacks) {
            p.validate()?;
        }
        let mut names: Vec<&str> = self
            .workloads
            .iter()
            .map(|w| w.name.as_str())
            .chain(self.benign.iter().chain(&self.attacks).map(|p| p.name.as_str()))
            .chain([self.background.name.as_str()])
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("scenario names must be unique".into()));
        }
        Ok(())
    }
}

/// Typical per-interval magnitude of each event, in canonical order.
const EVENT_SCALE: [f64; NUM_EVENTS] =
    [2000.0, 900.0, 800.0, 2400.0, 700.0, 650.0, 350.0, 420.0, 330.0, 380.0, 60.0, 25.0, 4.0];

fn scaled(fractions: [f64; NUM_EVENTS]) -> [f64; NUM_EVENTS] {
    let mut out = [0.0; NUM_EVENTS];
    for k in 0..NUM_EVENTS {
        out[k] = fractions[k] * EVENT_SCALE[k];
    }
    out
}

fn workload_preset(
    name: &str,
    multipliers: [f64; NUM_EVENTS],
    periods: (f64, f64),
    amp: f64,
    phase: f64,
) -> WorkloadSpec {
    let baseline = scaled(multipliers);
    let mut periodic = Vec::new();
    for (k, e) in EventId::ALL.iter().enumerate() {
        // Alternate the dominant period across events so workloads differ in
        // their cross-event structure.
        let (p1, p2) = if k % 2 == 0 { periods } else { (periods.1, periods.0) };
        periodic.push(PeriodicTerm {
            event: *e,
            amplitude: amp * baseline[k],
            period: p1,
            phase: phase + 0.37 * k as f64,
        });
        periodic.push(PeriodicTerm {
            event: *e,
            amplitude: 0.4 * amp * baseline[k],
            period: p2,
            phase: 1.3 * phase + 0.11 * k as f64,
        });
    }
    let mut noise_scale = [0.0; NUM_EVENTS];
    for k in 0..NUM_EVENTS {
        noise_scale[k] = 0.02 * baseline[k];
    }
    WorkloadSpec { name: name.into(), baseline, periodic, noise_scale }
}

fn perturb_preset(name: &str, kind: PerturbKind, offset: [f64; NUM_EVENTS], noise: [f64; NUM_EVENTS]) -> PerturbSpec {
    PerturbSpec { name: name.into(), kind, offset: scaled(offset), noise_scale: scaled(noise), duty: Duty::ALWAYS }
}

/// Names of the built-in workloads.
pub const WORKLOAD_NAMES: [&str; 5] = ["ml_training", "database", "stream_server", "web_server", "mapreduce"];
/// Names of the built-in benign programs.
pub const BENIGN_NAMES: [&str; 11] =
    ["gpg_rsa", "gcc", "bzip2", "h264ref", "mcf", "milc", "namd", "libquantum", "soplex", "hmmer", "gobmk"];
/// Names of the built-in attacks.
pub const ATTACK_NAMES: [&str; 9] =
    ["l1pp", "l3pp", "fr", "ff", "spectre_v1", "spectre_v2", "spectre_v3", "spectre_v4", "buffer_overflow"];

/// The preset catalog: five workloads, eleven benign programs, nine attacks.
pub fn builtin_scenarios() -> ScenarioCatalog {
    use PerturbKind::{Attack, Benign};

    //                      ins   s_is  s_re  cyc   load  dtlbr store bpu   dtlbw br    l1d   l1i   cs
    let workloads = vec![
        workload_preset(
            "ml_training",
            [1.3, 0.8, 0.9, 1.1, 1.2, 1.0, 0.7, 0.9, 0.8, 0.9, 1.1, 0.8, 0.7],
            (48.0, 130.0),
            0.12,
            0.0,
        ),
        workload_preset(
            "database",
            [0.9, 1.2, 1.1, 1.0, 1.3, 1.3, 1.3, 1.0, 1.2, 1.0, 1.2, 1.1, 1.3],
            (32.0, 96.0),
            0.10,
            0.8,
        ),
        workload_preset(
            "stream_server",
            [1.0, 0.9, 1.0, 0.9, 0.9, 0.8, 1.0, 1.1, 1.0, 1.1, 0.9, 1.0, 0.9],
            (25.0, 75.0),
            0.15,
            1.7,
        ),
        workload_preset(
            "web_server",
            [0.8, 1.3, 1.2, 1.0, 0.8, 0.9, 0.9, 1.3, 0.9, 1.3, 0.8, 1.3, 1.4],
            (40.0, 160.0),
            0.11,
            2.4,
        ),
        workload_preset(
            "mapreduce",
            [1.1, 1.0, 0.8, 1.2, 1.0, 1.1, 1.2, 0.8, 1.1, 0.8, 1.0, 0.9, 1.0],
            (60.0, 200.0),
            0.13,
            3.1,
        ),
    ];

    // Benign programs shift the compute and memory-access events; their
    // footprint on cache misses and branch behavior stays small.
    //               ins   s_is  s_re  cyc   load  dtlbr store bpu   dtlbw br    l1d   l1i   cs
    let benign = vec![
        perturb_preset(
            "gpg_rsa",
            Benign,
            [0.30, 0.10, 0.10, 0.20, 0.05, 0.05, 0.02, 0.05, 0.02, 0.05, 0.02, 0.02, 0.0],
            [0.03, 0.01, 0.01, 0.02, 0.01, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "gcc",
            Benign,
            [0.25, 0.20, 0.15, 0.25, 0.20, 0.15, 0.15, 0.10, 0.10, 0.10, 0.05, 0.08, 0.10],
            [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01, 0.01, 0.0, 0.01, 0.0],
        ),
        perturb_preset(
            "bzip2",
            Benign,
            [0.20, 0.15, 0.20, 0.20, 0.30, 0.20, 0.25, 0.05, 0.15, 0.05, 0.05, 0.02, 0.0],
            [0.02, 0.01, 0.02, 0.02, 0.03, 0.02, 0.02, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "h264ref",
            Benign,
            [0.35, 0.10, 0.15, 0.30, 0.25, 0.10, 0.20, 0.08, 0.10, 0.08, 0.04, 0.03, 0.0],
            [0.03, 0.01, 0.01, 0.03, 0.02, 0.01, 0.02, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "mcf",
            Benign,
            [0.10, 0.35, 0.30, 0.25, 0.35, 0.35, 0.10, 0.05, 0.05, 0.05, 0.08, 0.02, 0.0],
            [0.01, 0.03, 0.03, 0.02, 0.03, 0.03, 0.01, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0],
        ),
        perturb_preset(
            "milc",
            Benign,
            [0.20, 0.30, 0.35, 0.30, 0.30, 0.25, 0.20, 0.03, 0.15, 0.03, 0.08, 0.02, 0.0],
            [0.02, 0.03, 0.03, 0.03, 0.02, 0.02, 0.02, 0.0, 0.01, 0.0, 0.01, 0.0, 0.0],
        ),
        perturb_preset(
            "namd",
            Benign,
            [0.40, 0.05, 0.10, 0.35, 0.20, 0.05, 0.10, 0.03, 0.05, 0.03, 0.02, 0.01, 0.0],
            [0.03, 0.01, 0.01, 0.03, 0.02, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "libquantum",
            Benign,
            [0.25, 0.25, 0.20, 0.25, 0.25, 0.30, 0.05, 0.05, 0.02, 0.05, 0.06, 0.01, 0.0],
            [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "soplex",
            Benign,
            [0.20, 0.25, 0.25, 0.25, 0.25, 0.20, 0.15, 0.08, 0.10, 0.08, 0.06, 0.02, 0.0],
            [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "hmmer",
            Benign,
            [0.40, 0.10, 0.10, 0.30, 0.30, 0.10, 0.20, 0.10, 0.10, 0.10, 0.02, 0.01, 0.0],
            [0.03, 0.01, 0.01, 0.02, 0.02, 0.01, 0.02, 0.01, 0.01, 0.01, 0.0, 0.0, 0.0],
        ),
        perturb_preset(
            "gobmk",
            Benign,
            [0.30, 0.15, 0.15, 0.25, 0.20, 0.10, 0.10, 0.15, 0.05, 0.15, 0.04, 0.06, 0.05],
            [0.02, 0.01, 0.01, 0.02, 0.02, 0.01, 0.01, 0.02, 0.0, 0.02, 0.0, 0.01, 0.0],
        ),
    ];

    // Attacks hammer caches, branch predictors and the scheduler.
    //               ins   s_is  s_re  cyc   load  dtlbr store bpu   dtlbw br    l1d   l1i   cs
    let attacks = vec![
        perturb_preset(
            "l1pp",
            Attack,
            [0.10, 0.20, 0.10, 0.10, 0.30, 0.10, 0.05, 0.0, 0.0, 0.0, 1.50, 0.30, 0.5],
            [0.008, 0.02, 0.012, 0.008, 0.032, 0.012, 0.004, 0.0, 0.0, 0.0, 0.16, 0.04, 0.12],
        ),
        perturb_preset(
            "l3pp",
            Attack,
            [0.10, 0.40, 0.30, 0.20, 0.40, 0.30, 0.05, 0.0, 0.0, 0.0, 1.20, 0.20, 1.0],
            [0.008, 0.04, 0.032, 0.016, 0.04, 0.024, 0.004, 0.0, 0.0, 0.0, 0.2, 0.032, 0.2],
        ),
        perturb_preset(
            "fr",
            Attack,
            [0.05, 0.30, 0.20, 0.10, 0.20, 0.15, 0.02, 0.0, 0.0, 0.0, 1.00, 0.50, 0.8],
            [0.004, 0.032, 0.02, 0.012, 0.024, 0.016, 0.0, 0.0, 0.0, 0.0, 0.14, 0.08, 0.16],
        ),
        perturb_preset(
            "ff",
            Attack,
            [0.05, 0.50, 0.40, 0.15, 0.10, 0.10, 0.02, 0.0, 0.0, 0.0, 0.80, 0.80, 1.2],
            [0.004, 0.06, 0.04, 0.016, 0.012, 0.012, 0.0, 0.0, 0.0, 0.0, 0.12, 0.12, 0.24],
        ),
        perturb_preset(
            "spectre_v1",
            Attack,
            [0.10, 0.20, 0.15, 0.10, 0.15, 0.05, 0.02, 0.80, 0.0, 0.60, 0.80, 0.20, 0.3],
            [0.008, 0.02, 0.016, 0.008, 0.016, 0.004, 0.0, 0.1, 0.0, 0.08, 0.12, 0.032, 0.08],
        ),
        perturb_preset(
            "spectre_v2",
            Attack,
            [0.10, 0.30, 0.20, 0.15, 0.10, 0.05, 0.02, 1.20, 0.0, 1.00, 0.40, 0.60, 0.5],
            [0.008, 0.032, 0.02, 0.016, 0.012, 0.004, 0.0, 0.16, 0.0, 0.14, 0.06, 0.08, 0.12],
        ),
        perturb_preset(
            "spectre_v3",
            Attack,
            [0.20, 0.60, 0.50, 0.30, 0.30, 0.80, 0.05, 0.50, 0.30, 0.40, 2.00, 1.00, 2.0],
            [0.02, 0.08, 0.06, 0.032, 0.032, 0.1, 0.004, 0.06, 0.04, 0.048, 0.28, 0.14, 0.4],
        ),
        perturb_preset(
            "spectre_v4",
            Attack,
            [0.10, 0.25, 0.20, 0.10, 0.40, 0.10, 0.50, 0.40, 0.20, 0.30, 0.70, 0.15, 0.4],
            [0.008, 0.024, 0.02, 0.008, 0.048, 0.012, 0.06, 0.048, 0.024, 0.04, 0.1, 0.02, 0.08],
        ),
        perturb_preset(
            "buffer_overflow",
            Attack,
            [0.15, 0.15, 0.10, 0.10, 0.20, 0.20, 0.40, 0.30, 0.40, 0.30, 0.50, 0.40, 1.5],
            [0.012, 0.016, 0.012, 0.008, 0.024, 0.024, 0.048, 0.04, 0.048, 0.04, 0.08, 0.06, 0.32],
        ),
    ];

    let background = {
        let baseline = scaled([0.08; NUM_EVENTS]);
        let mut noise_scale = [0.0; NUM_EVENTS];
        for k in 0..NUM_EVENTS {
            noise_scale[k] = 0.005 * EVENT_SCALE[k];
        }
        WorkloadSpec { name: "idle".into(), baseline, periodic: Vec::new(), noise_scale }
    };

    ScenarioCatalog { workloads, benign, attacks, background }
}

fn fmt_array(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_array(key: &str, value: &str) -> Result<[f64; NUM_EVENTS]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != NUM_EVENTS {
        return Err(Error::Parse(format!("`{key}` needs {NUM_EVENTS} values, found {}", parts.len())));
    }
    let mut out = [0.0; NUM_EVENTS];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| Error::Parse(format!("`{key}`: bad number `{p}`")))?;
    }
    Ok(out)
}

impl ScenarioCatalog {
    /// Serializes the catalog as `[section name]` blocks of `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# redguard scenario presets v1\n");
        let workload = |out: &mut String, section: &str, w: &WorkloadSpec| {
            let _ = writeln!(out, "\n[{section} {}]", w.name);
            let _ = writeln!(out, "baseline={}", fmt_array(&w.baseline));
            let _ = writeln!(out, "noise={}", fmt_array(&w.noise_scale));
            for t in &w.periodic {
                let _ = writeln!(out, "term={},{},{},{}", t.event, t.amplitude, t.period, t.phase);
            }
        };
        workload(&mut out, "background", &self.background);
        for w in &self.workloads {
            workload(&mut out, "workload", w);
        }
        for p in self.benign.iter().chain(&self.attacks) {
            let _ = writeln!(out, "\n[perturb {}]", p.name);
            let _ = writeln!(out, "kind={}", p.kind.as_str());
            let _ = writeln!(out, "offset={}", fmt_array(&p.offset));
            let _ = writeln!(out, "noise={}", fmt_array(&p.noise_scale));
            let _ = writeln!(out, "duty={},{}", p.duty.on, p.duty.off);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        enum Section {
            Background(WorkloadSpec),
            Workload(WorkloadSpec),
            Perturb(PerturbSpec),
        }
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse(format!("line {}: {msg}", i + 1));
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let (kind, name) =
                    header.split_once(' ').ok_or_else(|| err("section needs a kind and a name".into()))?;
                let empty_workload = || WorkloadSpec {
                    name: name.trim().into(),
                    baseline: [0.0; NUM_EVENTS],
                    periodic: Vec::new(),
                    noise_scale: [0.0; NUM_EVENTS],
                };
                sections.push(match kind {
                    "background" => Section::Background(empty_workload()),
                    "workload" => Section::Workload(empty_workload()),
                    "perturb" => Section::Perturb(PerturbSpec {
                        name: name.trim().into(),
                        kind: PerturbKind::Benign,
                        offset: [0.0; NUM_EVENTS],
                        noise_scale: [0.0; NUM_EVENTS],
                        duty: Duty::ALWAYS,
                    }),
                    other => return Err(err(format!("unknown section kind `{other}`"))),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match sections.last_mut() {
                None => return Err(err("key outside of a section".into())),
                Some(Section::Background(w) | Section::Workload(w)) => match key {
                    "baseline" => w.baseline = parse_array(key, value)?,
                    "noise" => w.noise_scale = parse_array(key, value)?,
                    "term" => {
                        let f: Vec<&str> = value.split(',').map(str::trim).collect();
                        if f.len() != 4 {
                            return Err(err("term needs event,amplitude,period,phase".into()));
                        }
                        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
                        w.periodic.push(PeriodicTerm {
                            event: f[0].parse()?,
                            amplitude: num(f[1])?,
                            period: num(f[2])?,
                            phase: num(f[3])?,
                        });
                    }
                    other => return Err(err(format!("unknown workload key `{other}`"))),
                },
                Some(Section::Perturb(p)) => match key {
                    "kind" => {
                        p.kind = match value {
                            "benign" => PerturbKind::Benign,
                            "attack" => PerturbKind::Attack,
                            other => return Err(err(format!("unknown perturbation kind `{other}`"))),
                        }
                    }
                    "offset" => p.offset = parse_array(key, value)?,
                    "noise" => p.noise_scale = parse_array(key, value)?,
                    "duty" => {
                        let (on, off) = value.split_once(',').ok_or_else(|| err("duty needs on,off".into()))?;
                        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| err(format!("bad count `{s}`")));
                        p.duty = Duty { on: int(on)?, off: int(off)? };
                    }
                    other => return Err(err(format!("unknown perturbation key `{other}`"))),
                },
            }
        }

        let mut background = None;
        let mut catalog = ScenarioCatalog {
            workloads: Vec::new(),
            benign: Vec::new(),
            attacks: Vec::new(),
            background: builtin_scenarios().background,
        };
        for s in sections {
            match s {
                Section::Background(w) => background = Some(w),
                Section::Workload(w) => catalog.workloads.push(w),
                Section::Perturb(p) => match p.kind {
                    PerturbKind::Benign => catalog.benign.push(p),
                    PerturbKind::Attack => catalog.attacks.push(p),
                },
            }
        }
        if let Some(b) = background {
            catalog.background = b;
        }
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(trace: &Trace, k: usize) -> f64 {
        trace.samples().iter().map(|s| s.counts[k]).sum::<f64>() / trace.len() as f64
    }

    #[test]
    fn zero_noise_limit_is_deterministic_component() {
        let mut w = builtin_scenarios().workloads[0].clone();
        w.noise_scale = [1e-300; NUM_EVENTS];
        let t = generate(Some(&w), &[], 500, 1).unwrap();
        for (i, s) in t.samples().iter().enumerate() {
            assert_eq!(s.counts, w.deterministic(i));
        }
    }

    #[test]
    fn duty_cycle_gates_offsets() {
        let attack = PerturbSpec {
            name: "a".into(),
            kind: PerturbKind::Attack,
            offset: [5.0; NUM_EVENTS],
            noise_scale: [0.0; NUM_EVENTS],
            duty: Duty { on: 100, off: 200 },
        };
        let t = generate(None, &[attack], 900, 3).unwrap();
        for (i, s) in t.samples().iter().enumerate() {
            let expected = if i % 300 < 100 { 5.0 } else { 0.0 };
            assert!(s.counts.iter().all(|&v| v == expected), "sample {i}");
        }
        assert_eq!(t.label.attack.as_deref(), Some("a"));
    }

    #[test]
    fn same_seed_same_trace() {
        let c = builtin_scenarios();
        let a = generate(Some(&c.workloads[1]), &[c.attacks[2].clone(), c.benign[0].clone()], 400, 99).unwrap();
        let b = generate(Some(&c.workloads[1]), &[c.attacks[2].clone(), c.benign[0].clone()], 400, 99).unwrap();
        assert_eq!(a, b);
        let c2 = generate(Some(&c.workloads[1]), &[c.attacks[2].clone(), c.benign[0].clone()], 400, 100).unwrap();
        assert_ne!(a.samples(), c2.samples());
    }

    #[test]
    fn catalog_sizes_and_names() {
        let c = builtin_scenarios();
        assert_eq!((c.workloads.len(), c.benign.len(), c.attacks.len()), (5, 11, 9));
        assert!(c.attack("spectre_v3").is_some());
        c.validate().unwrap();
        for (w, name) in c.workloads.iter().zip(WORKLOAD_NAMES) {
            assert_eq!(w.name, name);
        }
    }

    #[test]
    fn attacks_hit_cache_and_branch_events_harder() {
        let c = builtin_scenarios();
        let footprint = |p: &PerturbSpec| -> f64 {
            [EventId::BpuRead, EventId::Branch, EventId::L1dReadMiss, EventId::L1iReadMiss]
                .iter()
                .map(|e| (p.offset[e.index()] + 3.0 * p.noise_scale[e.index()]) / EVENT_SCALE[e.index()])
                .sum()
        };
        let max_benign = c.benign.iter().map(footprint).fold(0.0, f64::max);
        let min_attack = c.attacks.iter().map(footprint).fold(f64::INFINITY, f64::min);
        assert!(min_attack > max_benign, "{min_attack} <= {max_benign}");
    }

    #[test]
    fn attacks_separate_from_workloads() {
        let c = builtin_scenarios();
        for w in &c.workloads {
            let base = generate(Some(w), &[], 3000, 5).unwrap();
            for a in &c.attacks {
                let mixed = generate(Some(w), std::slice::from_ref(a), 3000, 5).unwrap();
                let shifted = (0..NUM_EVENTS)
                    .filter(|&k| (mean(&mixed, k) - mean(&base, k)).abs() >= 3.0 * w.noise_scale[k])
                    .count();
                assert!(shifted >= 2, "{} + {}: {shifted} events shifted", w.name, a.name);
            }
        }
    }

    #[test]
    fn clamping_inactive_with_large_baseline() {
        let w = WorkloadSpec {
            name: "flat".into(),
            baseline: [5.0; NUM_EVENTS],
            periodic: Vec::new(),
            noise_scale: [1.0; NUM_EVENTS],
        };
        // P(z < -5) ~ 2.9e-7 per draw; 13 * 2000 draws keep the failure
        // probability below 1e-2 and the seed is fixed.
        let t = generate(Some(&w), &[], 2000, 17).unwrap();
        assert!(t.samples().iter().all(|s| s.counts.iter().all(|&v| v > 0.0)));
        for w in builtin_scenarios().workloads {
            let t = generate(Some(&w), &[], 2000, 3).unwrap();
            assert!(t.samples().iter().all(|s| s.counts.iter().all(|&v| v > 0.0)), "{}", w.name);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let c = builtin_scenarios();
        let mut p = c.benign[0].clone();
        p.offset = [0.0; NUM_EVENTS];
        p.noise_scale = [0.0; NUM_EVENTS];
        assert!(generate(Some(&c.workloads[0]), &[p], 10, 0).is_err());
        let mut w = c.workloads[0].clone();
        w.periodic[0].period = 1.0;
        assert!(generate(Some(&w), &[], 10, 0).is_err());
        assert!(generate(None, &[], 10, 0).is_err());
        assert!(generate(Some(&c.workloads[0]), &[], 0, 0).is_err());
    }

    #[test]
    fn preset_text_round_trip() {
        let mut c = builtin_scenarios();
        c.attacks[0] = c.attacks[0].clone().with_duty(100, 250);
        let parsed = ScenarioCatalog::parse(&c.to_text()).unwrap();
        assert_eq!(parsed, c);
    }
}
