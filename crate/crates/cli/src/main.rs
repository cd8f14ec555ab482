use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use redguard_core::engine::{classify_windows, run_offline, Case, DetectionEvent, Detectors, EngineConfig};
use redguard_core::eval::{run_experiment, scenario_seed, ExperimentConfig, StageCosts};
use redguard_core::features::{
    load_eta_bar, load_universe_samples, published_report, select_features, EventUniverse, ImportanceReport,
};
use redguard_core::manifest::{verify_manifest, ProgramManifest, ProgramRole, Verification};
use redguard_core::predictor::{load_model, save_model, train, LstmModel, SequencePredictor, TrainConfig};
use redguard_core::red::{
    compute_red, evaluator, load_detector, profile_normal, profile_step2, save_detector, KdeDetector, ProfileOptions,
    RedSet,
};
use redguard_core::synth::{builtin_scenarios, generate_with_interval, ScenarioCatalog, WorkloadSpec};
use redguard_core::trace::{load_trace, save_trace, split_equal, EventId, ScenarioLabel, Trace, DEFAULT_INTERVAL_MS};
use redguard_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "redguard", version, about = "Two-step anomaly and attack detection over hardware counter traces")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank counter events by first-principal-component importance.
    SelectFeatures(SelectFeaturesArgs),
    /// Write synthetic traces from the scenario presets.
    Simulate(SimulateArgs),
    /// Train the next-sample predictor on normal workload traces.
    Train(TrainArgs),
    /// Build the normal, attack and benign detector profiles.
    Profile(ProfileArgs),
    /// Replay a trace through the detector and print the event log.
    Detect(DetectArgs),
    /// Run the synthetic end-to-end experiment and write its report.
    Evaluate(EvaluateArgs),
    /// Check a program binary against a digest manifest.
    Verify(VerifyArgs),
    /// Add or replace a program in a digest manifest.
    Register(RegisterArgs),
}

#[derive(Args, Debug)]
struct SelectFeaturesArgs {
    /// Directory of per-workload counter CSVs (`t_ms` plus one column per
    /// universe event); the file stem names the workload.
    #[arg(long, required_unless_present = "from_eta")]
    traces: Option<PathBuf>,
    /// Event universe: `34` (full counter list), `13` (canonical events) or
    /// a file with one event name per line.
    #[arg(long, default_value = "34")]
    universe: String,
    /// Minimum mean importance for an event to be kept.
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
    /// Re-rank a mean-importance table instead of computing one: `published`
    /// or a CSV of `event,eta_bar` rows.
    #[arg(long, conflicts_with = "traces")]
    from_eta: Option<String>,
    /// Report CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory; gets `workload/`, `attack/`, `benign/`, `mixed/`
    /// and `paused/` subdirectories.
    #[arg(long)]
    out: PathBuf,
    /// Samples per trace.
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    /// Seed for trace generation.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Sampling interval in ms.
    #[arg(long, default_value_t = DEFAULT_INTERVAL_MS)]
    interval_ms: f64,
    /// Scenario preset file (default: built-in presets).
    #[arg(long)]
    presets: Option<PathBuf>,
    /// Comma-separated workloads to simulate (default: all).
    #[arg(long, value_delimiter = ',')]
    workloads: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory of normal workload trace CSVs. The first third of each
    /// trace is used for training.
    #[arg(long)]
    traces: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// LSTM hidden units.
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// History length L.
    #[arg(long, default_value_t = 16)]
    history: usize,
    /// Initial learning rate; halved every 10 epochs.
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seed for weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct KdeArgs {
    /// Density evaluator: `exact` or `truncated`.
    #[arg(long = "kde-eval", default_value = "exact")]
    kde_eval: String,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Normal workload traces. First thirds are references, second thirds
    /// calibrate the threshold.
    #[arg(long)]
    normal: PathBuf,
    /// Known attack traces, split the same way.
    #[arg(long)]
    attack: PathBuf,
    /// Certified benign program traces, split the same way.
    #[arg(long)]
    benign: PathBuf,
    /// Directory for `normal.txt`, `attack.txt` and `benign.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Share of normal validation errors accepted by the normal detector.
    #[arg(long, default_value_t = 0.80)]
    coverage: f64,
    /// Bandwidth rule (`scott`, `silverman`) or a fixed positive value.
    #[arg(long, default_value = "scott")]
    bandwidth: String,
    /// Upper bound on reference samples per detector; 0 keeps all.
    #[arg(long, default_value_t = 2000)]
    max_reference: usize,
    #[command(flatten)]
    kde: KdeArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DetectMode {
    /// Sample-by-sample replay through the monitoring state machine.
    Stream,
    /// Consecutive non-overlapping windows, each decided independently.
    Windows,
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Directory written by `profile`.
    #[arg(long)]
    profiles: PathBuf,
    /// Trace to monitor.
    #[arg(long)]
    trace: PathBuf,
    /// What the core runs while the workload is paused; defaults to the
    /// monitored trace itself.
    #[arg(long)]
    paused: Option<PathBuf>,
    /// Window size w.
    #[arg(long = "w", default_value_t = 5)]
    window: usize,
    /// How the trace is replayed.
    #[arg(long, value_enum, default_value_t = DetectMode::Stream)]
    mode: DetectMode,
    /// Event log to write (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    kde: KdeArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CostSource {
    /// Per-stage costs measured on the reference server.
    Published,
    /// Mean per-stage costs timed during this run.
    Measured,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated window sizes to sweep.
    #[arg(long = "w", value_delimiter = ',', default_values_t = vec![1usize, 5, 10, 50, 100, 200])]
    windows: Vec<usize>,
    /// Window used for the case tables and the zero-day experiment.
    #[arg(long, default_value_t = 5)]
    primary_w: usize,
    /// Experiment seed; every scenario trace seed derives from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Samples per trace.
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    /// Stage costs for the latency columns.
    #[arg(long, value_enum, default_value_t = CostSource::Published)]
    stage_costs: CostSource,
    /// Bandwidth rule (`scott`, `silverman`) or a fixed positive value.
    #[arg(long, default_value = "scott")]
    bandwidth: String,
    /// Share of normal validation errors accepted by the normal detector.
    #[arg(long, default_value_t = 0.80)]
    coverage: f64,
    /// Upper bound on reference samples per detector; 0 keeps all.
    #[arg(long, default_value_t = 2000)]
    max_reference: usize,
    /// Training epochs.
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Comma-separated workloads (default: all presets).
    #[arg(long, value_delimiter = ',')]
    workloads: Vec<String>,
    /// Scenario preset file (default: built-in presets).
    #[arg(long)]
    presets: Option<PathBuf>,
    /// Comma-separated attacks known in the zero-day experiment.
    #[arg(long, value_delimiter = ',')]
    known: Vec<String>,
    /// Skip the zero-day experiment.
    #[arg(long)]
    no_zero_day: bool,
    #[command(flatten)]
    kde: KdeArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Manifest file.
    #[arg(long)]
    manifest: PathBuf,
    /// Program binary to check.
    #[arg(long)]
    program: PathBuf,
    /// Manifest name of the program (default: file name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Manifest file; created if missing.
    #[arg(long)]
    manifest: PathBuf,
    /// Program binary to check.
    #[arg(long)]
    program: PathBuf,
    /// `workload` or `benign`.
    #[arg(long)]
    role: String,
    /// Manifest name of the program (default: file name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_numerical() => EXIT_NUMERICAL,
            Error::SchemaMismatch(_)
            | Error::NonMonotoneTimestamp { .. }
            | Error::IntervalMismatch { .. }
            | Error::InvalidCount { .. }
            | Error::Parse(_)
            | Error::Empty(_)
            | Error::TooShort(_) => EXIT_INPUT,
            Error::InvalidArgument(_) | Error::UnknownStrategy { .. } => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::SelectFeatures(a) => select_features_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Profile(a) => profile(a),
        Command::Detect(a) => detect(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Verify(a) => verify(a),
        Command::Register(a) => register(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn existing_dir(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("--{flag}: `{}` is not a directory", path.display())))
    }
}

fn existing_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("--{flag}: `{}` is not a file", path.display())))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure { code: EXIT_FAILURE, message: format!("{}: {e}", path.display()) })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure { code: EXIT_FAILURE, message: format!("{}: {e}", path.display()) })
}

/// `*.csv` files of `dir`, sorted by name.
fn csv_files(dir: &Path, flag: &str) -> CliResult<Vec<PathBuf>> {
    existing_dir(dir, flag)?;
    let entries = fs::read_dir(dir).map_err(|e| Failure::usage(format!("--{flag}: {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure { code: EXIT_INPUT, message: format!("--{flag}: no .csv files in `{}`", dir.display()) });
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_traces(dir: &Path, flag: &str) -> CliResult<Vec<Trace>> {
    csv_files(dir, flag)?
        .iter()
        .map(|p| load_trace(p, ScenarioLabel::workload(stem(p))).map_err(Failure::from))
        .collect()
}

fn select_features_cmd(a: SelectFeaturesArgs) -> CliResult<u8> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::usage(format!("--threshold {} outside [0, 1]", a.threshold)));
    }
    let report: ImportanceReport = match (&a.from_eta, &a.traces) {
        (Some(src), _) if src == "published" => published_report(a.threshold),
        (Some(src), _) => {
            existing_file(Path::new(src), "from-eta")?;
            load_eta_bar(src, a.threshold)?
        }
        (None, Some(dir)) => {
            let universe = match a.universe.as_str() {
                "34" => EventUniverse::default(),
                "13" => EventUniverse::new(EventId::ALL.iter().map(|e| e.name().to_string()).collect())?,
                file => {
                    existing_file(Path::new(file), "universe")?;
                    EventUniverse::load(file)?
                }
            };
            let mut per_workload = BTreeMap::new();
            for path in csv_files(dir, "traces")? {
                per_workload.insert(stem(&path), load_universe_samples(&path, &universe)?);
            }
            select_features(&per_workload, &universe, a.threshold)?
        }
        (None, None) => return Err(Failure::usage("either --traces or --from-eta is required")),
    };
    write_file(&a.out, &report.to_csv())?;
    println!(
        "selected {} of {} events: {}",
        report.selected.len(),
        report.events.len(),
        report.selected_names().join(", ")
    );
    Ok(0)
}

fn load_catalog(presets: &Option<PathBuf>) -> CliResult<ScenarioCatalog> {
    match presets {
        Some(p) => {
            existing_file(p, "presets")?;
            Ok(ScenarioCatalog::load(p)?)
        }
        None => Ok(builtin_scenarios()),
    }
}

fn simulate(a: SimulateArgs) -> CliResult<u8> {
    let catalog = load_catalog(&a.presets)?;
    catalog.validate()?;
    if a.samples < 2 {
        return Err(Failure::usage("--samples must be at least 2"));
    }
    let workloads: Vec<&WorkloadSpec> = if a.workloads.is_empty() {
        catalog.workloads.iter().collect()
    } else {
        a.workloads
            .iter()
            .map(|n| catalog.workload(n).ok_or_else(|| Failure::usage(format!("unknown workload `{n}`"))))
            .collect::<CliResult<_>>()?
    };
    for sub in ["workload", "attack", "benign", "mixed", "paused"] {
        create_dir(&a.out.join(sub))?;
    }
    let perturbs: Vec<_> = catalog.attacks.iter().chain(&catalog.benign).collect();
    let write = |sub: &str, name: &str, base: &WorkloadSpec, extra: &[_]| -> CliResult<()> {
        let seed = scenario_seed(a.seed, &format!("{sub}/{name}"));
        let trace = generate_with_interval(Some(base), extra, a.samples, seed, a.interval_ms)?;
        Ok(save_trace(&trace, a.out.join(sub).join(format!("{name}.csv")))?)
    };
    let mut count = 0;
    for w in &workloads {
        write("workload", &w.name, w, &[])?;
        count += 1;
        for p in &perturbs {
            write("mixed", &format!("{}+{}", w.name, p.name), w, std::slice::from_ref(*p))?;
            count += 1;
        }
    }
    for p in &perturbs {
        let sub = if catalog.attack(&p.name).is_some() { "attack" } else { "benign" };
        write(sub, &p.name, &catalog.background, std::slice::from_ref(*p))?;
        write("paused", &p.name, &catalog.background, std::slice::from_ref(*p))?;
        count += 2;
    }
    println!("wrote {count} traces of {} samples to {}", a.samples, a.out.display());
    Ok(0)
}

fn first_thirds(traces: &[Trace]) -> CliResult<Vec<(Trace, Trace)>> {
    traces
        .iter()
        .map(|t| {
            let (tr, va, _) = split_equal(t)?;
            Ok((tr, va))
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> CliResult<u8> {
    let traces = load_traces(&a.traces, "traces")?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        hidden_dim: a.hidden,
        history_len: a.history,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let parts = first_thirds(&traces)?;
    let refs: Vec<&Trace> = parts.iter().map(|p| &p.0).collect();
    let (model, report) = train(&refs, &cfg)?;
    save_model(&model, &a.out)?;
    println!(
        "trained on {} windows from {} traces; final mse {:.6}; wrote {}",
        report.windows,
        refs.len(),
        report.final_mse,
        a.out.display()
    );
    Ok(0)
}

fn red_thirds(model: &LstmModel, traces: &[Trace]) -> CliResult<(Vec<RedSet>, Vec<RedSet>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (tr, va) in first_thirds(traces)? {
        train.push(compute_red(model, &tr)?);
        val.push(compute_red(model, &va)?);
    }
    Ok((train, val))
}

fn refs(sets: &[RedSet]) -> Vec<&RedSet> {
    sets.iter().collect()
}

fn profile(a: ProfileArgs) -> CliResult<u8> {
    existing_file(&a.model, "model")?;
    for (dir, flag) in [(&a.normal, "normal"), (&a.attack, "attack"), (&a.benign, "benign")] {
        existing_dir(dir, flag)?;
    }
    if !(a.coverage > 0.0 && a.coverage < 1.0) {
        return Err(Failure::usage(format!("--coverage {} outside (0, 1)", a.coverage)));
    }
    let opts = ProfileOptions {
        coverage: a.coverage,
        bandwidth: a.bandwidth.clone(),
        evaluator: a.kde.kde_eval.clone(),
        max_reference: a.max_reference,
    };
    evaluator(&opts.evaluator)?;
    redguard_core::red::bandwidth_rule(&opts.bandwidth)?;
    let model = load_model(&a.model)?;

    let (n_tr, n_va) = red_thirds(&model, &load_traces(&a.normal, "normal")?)?;
    let (a_tr, a_va) = red_thirds(&model, &load_traces(&a.attack, "attack")?)?;
    let (b_tr, b_va) = red_thirds(&model, &load_traces(&a.benign, "benign")?)?;
    let normal = profile_normal(&refs(&n_tr), &refs(&n_va), &opts)?;
    let (attack, benign) = profile_step2(&refs(&a_tr), &refs(&a_va), &refs(&b_tr), &refs(&b_va), &opts)?;

    create_dir(&a.out)?;
    for (name, det) in [("normal", &normal), ("attack", &attack), ("benign", &benign)] {
        save_detector(det, a.out.join(format!("{name}.txt")))?;
        println!(
            "{name}: {} references, bandwidth {:.6}, threshold {:.4}",
            det.len(),
            det.bandwidth(),
            det.threshold().unwrap_or(f64::NAN)
        );
    }
    Ok(0)
}

fn load_detectors(dir: &Path, kde_eval: &str) -> CliResult<Detectors> {
    existing_dir(dir, "profiles")?;
    let eval = evaluator(kde_eval)?;
    let load = |name: &str| -> CliResult<KdeDetector> {
        let path = dir.join(format!("{name}.txt"));
        existing_file(&path, "profiles")?;
        let det = load_detector(&path)?;
        det.require_threshold()?;
        Ok(det.with_evaluator(eval.clone()))
    };
    Ok(Detectors { normal: load("normal")?, attack: load("attack")?, benign: load("benign")? })
}

fn detect(a: DetectArgs) -> CliResult<u8> {
    existing_file(&a.model, "model")?;
    existing_file(&a.trace, "trace")?;
    if let Some(p) = &a.paused {
        existing_file(p, "paused")?;
    }
    if a.window == 0 {
        return Err(Failure::usage("--w must be at least 1"));
    }
    let model = load_model(&a.model)?;
    let detectors = load_detectors(&a.profiles, &a.kde.kde_eval)?;
    detectors.validate(&model)?;
    let trace = load_trace(&a.trace, ScenarioLabel::workload(stem(&a.trace)))?;
    let paused = match &a.paused {
        Some(p) => Some(load_trace(p, ScenarioLabel::default())?),
        None => None,
    };
    let events: Vec<DetectionEvent> = match a.mode {
        DetectMode::Stream => {
            let cfg = EngineConfig {
                interval_ms: trace.interval_ms(),
                pause_gap_ms: trace.interval_ms(),
                ..EngineConfig::published(a.window)
            };
            run_offline(&trace, paused.as_ref(), &model as &dyn SequencePredictor, &detectors, &cfg)?
        }
        DetectMode::Windows => {
            classify_windows(&trace, paused.as_ref().unwrap_or(&trace), &model, &detectors, a.window)?
        }
    };

    let mut log = String::new();
    for e in &events {
        log.push_str(&e.to_string());
        log.push('\n');
    }
    match &a.out {
        Some(path) => write_file(path, &log)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(log.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure { code: EXIT_FAILURE, message: e.to_string() })?;
        }
    }
    let mut cases = [0usize; 4];
    for c in events.iter().filter_map(DetectionEvent::case) {
        cases[c.number() as usize - 1] += 1;
    }
    let anomalies = events.iter().filter(|e| e.is_anomaly()).count();
    let summary: Vec<String> = Case::ALL.iter().map(|c| format!("{c}={}", cases[c.number() as usize - 1])).collect();
    eprintln!("{} events, {anomalies} anomalies, {}", events.len(), summary.join(" "));
    Ok(0)
}

fn evaluate(a: EvaluateArgs) -> CliResult<u8> {
    let catalog = load_catalog(&a.presets)?;
    if a.windows.is_empty() || a.windows.contains(&0) || a.primary_w == 0 {
        return Err(Failure::usage("window sizes must be at least 1"));
    }
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        seed: a.seed,
        samples_per_scenario: a.samples,
        train: TrainConfig { epochs: a.epochs, ..defaults.train.clone() },
        coverage: a.coverage,
        bandwidth: a.bandwidth.clone(),
        evaluator: a.kde.kde_eval.clone(),
        max_reference: a.max_reference,
        windows: a.windows.clone(),
        primary_window: a.primary_w,
        zero_day_known: if a.no_zero_day {
            Vec::new()
        } else if a.known.is_empty() {
            defaults.zero_day_known.clone()
        } else {
            a.known.clone()
        },
        workloads: if a.workloads.is_empty() { None } else { Some(a.workloads.clone()) },
        stage_costs: match a.stage_costs {
            CostSource::Published => StageCosts::Published,
            CostSource::Measured => StageCosts::Measured,
        },
        ..defaults
    };
    let report = run_experiment(&catalog, cfg)?;
    create_dir(&a.out)?;
    report.write(&a.out)?;
    print!("{}", report.summary());
    Ok(0)
}

fn verify(a: VerifyArgs) -> CliResult<u8> {
    existing_file(&a.manifest, "manifest")?;
    existing_file(&a.program, "program")?;
    let manifest = ProgramManifest::load(&a.manifest)?;
    let bytes = fs::read(&a.program)
        .map_err(|e| Failure { code: EXIT_FAILURE, message: format!("{}: {e}", a.program.display()) })?;
    let name =
        a.name.unwrap_or_else(|| a.program.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let result = verify_manifest(&bytes, &name, &manifest);
    println!("{name}: {result}");
    Ok(if result == Verification::Pass { 0 } else { EXIT_FAILURE })
}

fn register(a: RegisterArgs) -> CliResult<u8> {
    existing_file(&a.program, "program")?;
    let role: ProgramRole = a.role.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let old = if a.manifest.exists() { ProgramManifest::load(&a.manifest)? } else { ProgramManifest::new() };
    let bytes = fs::read(&a.program)
        .map_err(|e| Failure { code: EXIT_FAILURE, message: format!("{}: {e}", a.program.display()) })?;
    let name =
        a.name.unwrap_or_else(|| a.program.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    let mut manifest = ProgramManifest::new();
    for entry in old.entries().filter(|e| e.name != name) {
        manifest.insert(entry.clone())?;
    }
    manifest.add_program(&name, role, &bytes)?;
    manifest.save(&a.manifest)?;
    println!("{name}: {}", manifest.get(&name).map(|e| e.digest.as_str()).unwrap_or_default());
    Ok(0)
}
