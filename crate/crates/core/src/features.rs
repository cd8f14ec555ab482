//! Behavior-marker selection from the first principal component.
//!
//! For each workload the leading eigenvector `w` of the (standardized)
//! covariance gives per-event importance `eta_i = |w_i| / sum_j |w_j|`.
//! Importances are averaged across workloads and events at or above the
//! threshold are kept.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const POWER_TOLERANCE: f64 = 1e-12;
const POWER_MAX_ITERATIONS: usize = 10_000;

/// The full set of countable events, in the order of the counter list.
pub const DEFAULT_UNIVERSE: [&str; 34] = [
    "instruction",
    "load",
    "store",
    "l1d_read_miss",
    "l1d_write_miss",
    "l1d_prefetch_miss",
    "l1i_read_miss",
    "llc_read_access",
    "llc_read_miss",
    "llc_write_access",
    "llc_write_miss",
    "llc_prefetch_access",
    "llc_prefetch_miss",
    "dtlb_read",
    "dtlb_read_miss",
    "dtlb_write",
    "dtlb_write_miss",
    "itlb_read",
    "itlb_read_miss",
    "bpu_read",
    "bpu_read_miss",
    "node_read_access",
    "node_read_miss",
    "node_write_access",
    "node_write_miss",
    "node_prefetch_access",
    "node_prefetch_miss",
    "cycles",
    "branch",
    "branch_miss",
    "page_fault",
    "context_switch",
    "stall_issue",
    "stall_retire",
];

/// Published mean importances of the thirteen retained events.
pub const PUBLISHED_ETA_BAR: [(&str, f64); 13] = [
    ("instruction", 0.267),
    ("stall_issue", 0.189),
    ("stall_retire", 0.178),
    ("cycles", 0.106),
    ("load", 0.067),
    ("dtlb_read", 0.043),
    ("store", 0.037),
    ("bpu_read", 0.030),
    ("dtlb_write", 0.025),
    ("branch", 0.023),
    ("l1d_read_miss", 0.020),
    ("l1i_read_miss", 0.018),
    ("context_switch", 0.015),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventUniverse {
    events: Vec<String>,
}

impl EventUniverse {
    pub fn new(events: Vec<String>) -> Result<Self> {
        if events.len() < 2 {
            return Err(Error::InvalidArgument("event universe needs at least two events".into()));
        }
        let mut sorted = events.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("event names must be unique".into()));
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Reads one event name per line (`#` comments allowed).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect(),
        )
    }
}

impl Default for EventUniverse {
    fn default() -> Self {
        Self { events: DEFAULT_UNIVERSE.iter().map(|s| s.to_string()).collect() }
    }
}

/// Options for [`first_pc_importance`].
#[derive(Debug, Clone, Copy)]
pub struct PcaOptions {
    /// z-score columns before the eigenproblem.
    pub standardize: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self { standardize: true }
    }
}

/// Per-event importance in the first principal component of `samples`
/// (rows are observations, columns events).
pub fn first_pc_importance(samples: &[Vec<f64>], opts: PcaOptions) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 observations, got {n}")));
    }
    let d = samples[0].len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 events, got {d}")));
    }
    if samples.iter().any(|r| r.len() != d) {
        return Err(Error::SchemaMismatch("rows have differing lengths".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite measurement".into()));
    }

    let mut mean = vec![0.0; d];
    for row in samples {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0; d];
    for row in samples {
        for k in 0..d {
            var[k] += (row[k] - mean[k]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);

    // Zero-variance columns carry no importance and stay out of the
    // eigenproblem.
    let active: Vec<usize> = (0..d).filter(|&k| var[k] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::DegenerateCovariance { workload: None });
    }
    let scale: Vec<f64> = active.iter().map(|&k| if opts.standardize { var[k].sqrt() } else { 1.0 }).collect();

    let m = active.len();
    let mut cov = vec![0.0; m * m];
    for row in samples {
        let centered: Vec<f64> = active.iter().zip(&scale).map(|(&k, s)| (row[k] - mean[k]) / s).collect();
        for i in 0..m {
            for j in i..m {
                cov[i * m + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            let v = cov[i * m + j] / (n - 1) as f64;
            cov[i * m + j] = v;
            cov[j * m + i] = v;
        }
    }

    let w = leading_eigenvector(&cov, m);
    let total: f64 = w.iter().map(|x| x.abs()).sum();
    let mut eta = vec![0.0; d];
    for (&k, wk) in active.iter().zip(&w) {
        eta[k] = wk.abs() / total;
    }
    Ok(eta)
}

/// Power iteration on a symmetric positive semi-definite `m x m` matrix.
/// The result has unit norm and its first nonzero entry positive.
pub fn leading_eigenvector(matrix: &[f64], m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    // Start from a fixed, non-symmetric vector so the iteration is
    // deterministic and rarely orthogonal to the leading eigenvector.
    let mut v: Vec<f64> = (0..m).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    normalize(&mut v);
    let mut next = vec![0.0; m];
    for iteration in 0..POWER_MAX_ITERATIONS {
        for i in 0..m {
            next[i] = (0..m).map(|j| matrix[i * m + j] * v[j]).sum();
        }
        if normalize(&mut next) == 0.0 {
            // Start vector in the null space: fall back to the largest diagonal entry.
            let k = (0..m).max_by(|&a, &b| matrix[a * m + a].total_cmp(&matrix[b * m + b])).unwrap_or(0);
            next.iter_mut().for_each(|x| *x = 0.0);
            next[k] = 1.0;
        }
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if delta <= POWER_TOLERANCE {
            log::trace!("power iteration converged after {} steps", iteration + 1);
            break;
        }
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub events: Vec<String>,
    /// Per-workload importance vectors, keyed by workload name.
    pub per_workload: BTreeMap<String, Vec<f64>>,
    pub eta_bar: Vec<f64>,
    pub threshold: f64,
    /// Indices into `events` with `eta_bar >= threshold`, by descending `eta_bar`.
    pub selected: Vec<usize>,
}

impl ImportanceReport {
    /// Builds a report from mean importances alone.
    pub fn from_eta_bar(events: Vec<String>, eta_bar: Vec<f64>, threshold: f64) -> Result<Self> {
        if events.len() != eta_bar.len() {
            return Err(Error::SchemaMismatch("one importance per event required".into()));
        }
        let selected = rank_selected(&eta_bar, threshold);
        Ok(Self { events, per_workload: BTreeMap::new(), eta_bar, threshold, selected })
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.selected.iter().map(|&i| self.events[i].as_str()).collect()
    }

    /// CSV: `event,eta_<workload>...,eta_bar,selected`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("event");
        for name in self.per_workload.keys() {
            let _ = write!(out, ",eta_{name}");
        }
        out.push_str(",eta_bar,selected\n");
        for (i, event) in self.events.iter().enumerate() {
            out.push_str(event);
            for eta in self.per_workload.values() {
                let _ = write!(out, ",{}", eta[i]);
            }
            let _ = writeln!(out, ",{},{}", self.eta_bar[i], u8::from(self.selected.contains(&i)));
        }
        out
    }
}

fn rank_selected(eta_bar: &[f64], threshold: f64) -> Vec<usize> {
    let mut selected: Vec<usize> = (0..eta_bar.len()).filter(|&i| eta_bar[i] >= threshold).collect();
    selected.sort_by(|&a, &b| eta_bar[b].total_cmp(&eta_bar[a]).then(a.cmp(&b)));
    selected
}

/// Averages first-component importances over workloads and keeps events at
/// or above `threshold`.
pub fn select_features(
    per_workload_samples: &BTreeMap<String, Vec<Vec<f64>>>,
    universe: &EventUniverse,
    threshold: f64,
) -> Result<ImportanceReport> {
    if per_workload_samples.is_empty() {
        return Err(Error::Empty("no workloads given".into()));
    }
    let mut per_workload = BTreeMap::new();
    for (name, samples) in per_workload_samples {
        if samples.iter().any(|r| r.len() != universe.len()) {
            return Err(Error::SchemaMismatch(format!(
                "workload `{name}` does not have {} event columns",
                universe.len()
            )));
        }
        let eta = first_pc_importance(samples, PcaOptions::default()).map_err(|e| match e {
            Error::DegenerateCovariance { .. } => Error::DegenerateCovariance { workload: Some(name.clone()) },
            other => other,
        })?;
        per_workload.insert(name.clone(), eta);
    }
    let d = universe.len();
    let k = per_workload.len() as f64;
    let eta_bar: Vec<f64> = (0..d).map(|i| per_workload.values().map(|eta| eta[i]).sum::<f64>() / k).collect();
    let selected = rank_selected(&eta_bar, threshold);
    Ok(ImportanceReport { events: universe.events().to_vec(), per_workload, eta_bar, threshold, selected })
}

/// The counter universe with the published mean importances; events absent
/// from the published table get zero.
pub fn published_report(threshold: f64) -> ImportanceReport {
    let universe = EventUniverse::default();
    let eta_bar = universe
        .events()
        .iter()
        .map(|e| PUBLISHED_ETA_BAR.iter().find(|(name, _)| name == e).map_or(0.0, |(_, v)| *v))
        .collect();
    ImportanceReport::from_eta_bar(universe.events().to_vec(), eta_bar, threshold)
        .expect("published table matches the default universe")
}

/// Reads a counter CSV with header `t_ms,<events>`; the event columns may
/// come in any order but must be exactly the universe. Rows come back in
/// universe order.
pub fn load_universe_samples(path: impl AsRef<Path>, universe: &EventUniverse) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.first().map(String::as_str) != Some("t_ms") || header.len() != universe.len() + 1 {
        return Err(Error::SchemaMismatch(format!(
            "{}: expected `t_ms` and {} event columns, found {} columns",
            path.display(),
            universe.len(),
            header.len()
        )));
    }
    let column: Vec<usize> = universe
        .events()
        .iter()
        .map(|e| {
            header
                .iter()
                .position(|h| h == e)
                .ok_or_else(|| Error::SchemaMismatch(format!("{}: missing column for event `{e}`", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse(format!("{}: line {line}: {e}", path.display())))?;
        let row = column
            .iter()
            .zip(universe.events())
            .map(|(&c, e)| {
                let raw = record.get(c).unwrap_or("").trim();
                raw.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(|| Error::InvalidCount {
                    line,
                    event: e.clone(),
                    value: raw.into(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no samples", path.display())));
    }
    Ok(rows)
}

/// Reads `event,eta_bar` rows (a header line is optional) and re-ranks them.
pub fn load_eta_bar(path: impl AsRef<Path>, threshold: f64) -> Result<ImportanceReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    let mut eta = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("{}: line {}: expected `event,eta`", path.display(), i + 1)))?;
        let value = value.split(',').next().unwrap_or("").trim();
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => {
                events.push(name.trim().to_string());
                eta.push(v);
            }
            _ if i == 0 => continue,
            _ => return Err(Error::Parse(format!("{}: line {}: bad importance `{value}`", path.display(), i + 1))),
        }
    }
    EventUniverse::new(events.clone())?;
    ImportanceReport::from_eta_bar(events, eta, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_dominant_component() {
        // cov = diag(1, 0.01): columns with std 1 and 0.1, uncorrelated.
        let samples = vec![vec![1.0, 0.1], vec![-1.0, 0.1], vec![1.0, -0.1], vec![-1.0, -0.1]];
        let eta = first_pc_importance(&samples, PcaOptions { standardize: false }).unwrap();
        assert!((eta[0] - 1.0).abs() < 1e-6 && eta[1].abs() < 1e-6, "{eta:?}");
    }

    #[test]
    fn correlated_pair_is_symmetric() {
        let samples: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let eta = first_pc_importance(&samples, PcaOptions::default()).unwrap();
        assert!((eta[0] - 0.5).abs() < 1e-12 && (eta[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_get_zero() {
        let samples: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 3.0, (i * i) as f64]).collect();
        let eta = first_pc_importance(&samples, PcaOptions::default()).unwrap();
        assert_eq!(eta[1], 0.0);
        assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let samples = vec![vec![1.0, 2.0, 3.0]; 5];
        assert!(matches!(
            first_pc_importance(&samples, PcaOptions::default()),
            Err(Error::DegenerateCovariance { .. })
        ));
        let mut map = BTreeMap::new();
        map.insert("flat".to_string(), vec![vec![1.0, 2.0]; 4]);
        let universe = EventUniverse::new(vec!["a".into(), "b".into()]).unwrap();
        match select_features(&map, &universe, 0.01) {
            Err(Error::DegenerateCovariance { workload }) => assert_eq!(workload.as_deref(), Some("flat")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_workload_and_zero_threshold() {
        let samples: Vec<Vec<f64>> =
            (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64]).collect();
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), samples.clone());
        let universe = EventUniverse::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let report = select_features(&map, &universe, 0.0).unwrap();
        assert_eq!(report.eta_bar, first_pc_importance(&samples, PcaOptions::default()).unwrap());
        assert_eq!(report.selected.len(), 3);
    }

    #[test]
    fn published_fixture_selects_thirteen() {
        let report = published_report(0.01);
        let names = report.selected_names();
        assert_eq!(names.len(), 13);
        assert_eq!(names[0], "instruction");
        assert_eq!(names[12], "context_switch");
        let canonical: Vec<&str> = crate::trace::EventId::ALL.iter().map(|e| e.name()).collect();
        assert_eq!(names, canonical);
    }

    #[test]
    fn universe_columns_are_reordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "t_ms,b,a\n0,1,2\n10,3,4\n").unwrap();
        let universe = EventUniverse::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(load_universe_samples(&path, &universe).unwrap(), vec![vec![2.0, 1.0], vec![4.0, 3.0]]);
        std::fs::write(&path, "t_ms,a\n0,1\n").unwrap();
        assert!(matches!(load_universe_samples(&path, &universe), Err(Error::SchemaMismatch(_))));
        std::fs::write(&path, "t_ms,b,a\n0,-1,2\n").unwrap();
        assert!(matches!(load_universe_samples(&path, &universe), Err(Error::InvalidCount { .. })));
    }

    #[test]
    fn eta_table_is_reranked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eta.csv");
        std::fs::write(&path, "event,eta_bar\nx,0.005\ny,0.6\nz,0.395\n").unwrap();
        let report = load_eta_bar(&path, 0.01).unwrap();
        assert_eq!(report.selected_names(), ["y", "z"]);
    }

    #[test]
    fn csv_layout() {
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), (0..10).map(|i| vec![i as f64, (i % 3) as f64]).collect::<Vec<_>>());
        let universe = EventUniverse::new(vec!["a".into(), "b".into()]).unwrap();
        let csv = select_features(&map, &universe, 0.01).unwrap().to_csv();
        assert!(csv.starts_with("event,eta_w,eta_bar,selected\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
