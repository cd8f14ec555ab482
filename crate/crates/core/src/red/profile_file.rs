//! Detector profile files.
//!
//! ```text
//! redguard-detector v1
//! kind=normal_workload
//! bandwidth=0.41
//! threshold=12.7          (or `none`)
//! dim=13
//! count=<n>
//! source=<free text>
//! <n rows of dim space-separated values>
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::evaluator::{DensityEvaluator, ExactEvaluator};
use super::{DetectorKind, KdeDetector};
use crate::error::{Error, Result};

const MAGIC: &str = "redguard-detector v1";

pub fn detector_to_text(detector: &KdeDetector) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind={}", detector.kind());
    let _ = writeln!(out, "bandwidth={}", detector.bandwidth());
    match detector.threshold() {
        Some(t) => {
            let _ = writeln!(out, "threshold={t}");
        }
        None => out.push_str("threshold=none\n"),
    }
    let _ = writeln!(out, "dim={}", detector.dim());
    let _ = writeln!(out, "count={}", detector.len());
    let _ = writeln!(out, "source={}", detector.source().replace('\n', " "));
    for row in detector.reference_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn detector_from_text(text: &str, evaluator: Arc<dyn DensityEvaluator>) -> Result<KdeDetector> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::Parse(format!("not a detector profile (expected `{MAGIC}` header)")));
    }
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
        match line.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
            _ => Err(Error::Parse(format!("expected `{key}=...`, got `{line}`"))),
        }
    };
    let kind: DetectorKind = header("kind")?.parse()?;
    let num = |v: String, key: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad `{key}` value `{v}`")));
    let bandwidth = num(header("bandwidth")?, "bandwidth")?;
    let threshold = match header("threshold")?.as_str() {
        "none" => None,
        v => Some(num(v.to_string(), "threshold")?),
    };
    let int = |v: String, key: &str| v.parse::<usize>().map_err(|_| Error::Parse(format!("bad `{key}` value `{v}`")));
    let dim = int(header("dim")?, "dim")?;
    let count = int(header("count")?, "count")?;
    let source = header("source")?;

    let mut flat = Vec::with_capacity(dim * count);
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let before = flat.len();
        for v in line.split_whitespace() {
            flat.push(v.parse::<f64>().map_err(|_| Error::Parse(format!("bad reference value `{v}`")))?);
        }
        if flat.len() - before != dim {
            return Err(Error::SchemaMismatch(format!(
                "reference row {} has {} values, profile dimension is {dim}",
                rows + 1,
                flat.len() - before
            )));
        }
        rows += 1;
    }
    if rows != count {
        return Err(Error::Parse(format!("profile declares {count} reference rows, found {rows}")));
    }
    let det = KdeDetector::from_flat(kind, dim, flat, bandwidth, source, evaluator)?;
    match threshold {
        Some(t) => det.with_threshold(t),
        None => Ok(det),
    }
}

pub fn save_detector(detector: &KdeDetector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, detector_to_text(detector)).map_err(|e| Error::io(path, e))
}

/// Loads a profile queried through the exact evaluator.
pub fn load_detector(path: impl AsRef<Path>) -> Result<KdeDetector> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    detector_from_text(&text, Arc::new(ExactEvaluator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::red::RedSet;

    #[test]
    fn round_trip_is_bit_exact() {
        let vectors = vec![vec![0.1, -2.5e-17, 3.0], vec![1.0 / 3.0, 2.0f64.sqrt(), -7.25]];
        let set = RedSet::from_vectors(3, vectors, "web_server+gcc").unwrap();
        let det = KdeDetector::build(DetectorKind::BenignProgram, &set, 0.123456789)
            .unwrap()
            .with_threshold(std::f64::consts::E)
            .unwrap();
        let text = detector_to_text(&det);
        let back = detector_from_text(&text, Arc::new(ExactEvaluator)).unwrap();
        assert_eq!(detector_to_text(&back), text);
        assert_eq!(back.threshold(), det.threshold());
        assert_eq!(back.log_density(&[0.0, 0.0, 0.0]), det.log_density(&[0.0, 0.0, 0.0]));
        assert_eq!(back.source(), "web_server+gcc");
    }

    #[test]
    fn malformed_profiles() {
        let set = RedSet::from_vectors(2, vec![vec![0.0, 1.0]], "s").unwrap();
        let det = KdeDetector::build(DetectorKind::NormalWorkload, &set, 1.0).unwrap();
        let text = detector_to_text(&det);
        assert!(text.contains("threshold=none"));
        let bad_row = text.replace("0 1\n", "0 1 2\n");
        assert!(matches!(detector_from_text(&bad_row, Arc::new(ExactEvaluator)), Err(Error::SchemaMismatch(_))));
        let bad_count = text.replace("count=1", "count=2");
        assert!(detector_from_text(&bad_count, Arc::new(ExactEvaluator)).is_err());
        assert!(detector_from_text("hello", Arc::new(ExactEvaluator)).is_err());
    }
}
