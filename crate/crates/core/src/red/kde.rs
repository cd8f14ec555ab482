//! Gaussian kernel density detectors.
//!
//! `f(x) = 1 / (n b^d (2 pi)^(d/2)) * sum_i exp(-|x - x_i|^2 / (2 b^2))`

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::evaluator::{DensityEvaluator, DensityIndex, ExactEvaluator};
use super::RedSet;
use crate::error::{Error, Result};

/// Densities below this are clamped before taking the logarithm.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// `-ln(DENSITY_FLOOR)`, the largest possible anomaly score.
pub const SCORE_CAP: f64 = 690.775527898213705205397436405309262280330446588631892809998;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    NormalWorkload,
    KnownAttack,
    BenignProgram,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::NormalWorkload => "normal_workload",
            DetectorKind::KnownAttack => "known_attack",
            DetectorKind::BenignProgram => "benign_program",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal_workload" | "normal" => Ok(DetectorKind::NormalWorkload),
            "known_attack" | "attack" => Ok(DetectorKind::KnownAttack),
            "benign_program" | "benign" => Ok(DetectorKind::BenignProgram),
            _ => Err(Error::Parse(format!("unknown detector kind `{s}`"))),
        }
    }
}

/// A reference distribution with a bandwidth and a score threshold.
/// Immutable: updates return a new detector.
#[derive(Clone)]
pub struct KdeDetector {
    kind: DetectorKind,
    dim: usize,
    bandwidth: f64,
    threshold: Option<f64>,
    reference: Arc<Vec<f64>>,
    source: String,
    /// `ln(n b^d (2 pi)^(d/2))`.
    log_norm: f64,
    evaluator: Arc<dyn DensityEvaluator>,
    index: Arc<dyn DensityIndex>,
}

impl fmt::Debug for KdeDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KdeDetector")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("n", &self.len())
            .field("bandwidth", &self.bandwidth)
            .field("threshold", &self.threshold)
            .field("evaluator", &self.evaluator.name())
            .finish()
    }
}

impl KdeDetector {
    /// Builds an uncalibrated detector with the exact evaluator.
    pub fn build(kind: DetectorKind, reference: &RedSet, bandwidth: f64) -> Result<Self> {
        Self::build_with(kind, reference, bandwidth, Arc::new(ExactEvaluator))
    }

    pub fn build_with(
        kind: DetectorKind,
        reference: &RedSet,
        bandwidth: f64,
        evaluator: Arc<dyn DensityEvaluator>,
    ) -> Result<Self> {
        let flat: Vec<f64> = reference.vectors().flat_map(|e| e.iter().copied()).collect();
        Self::from_flat(kind, reference.dim(), flat, bandwidth, reference.provenance.clone(), evaluator)
    }

    pub(crate) fn from_flat(
        kind: DetectorKind,
        dim: usize,
        reference: Vec<f64>,
        bandwidth: f64,
        source: String,
        evaluator: Arc<dyn DensityEvaluator>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("detector dimension must be positive".into()));
        }
        if reference.is_empty() || !reference.len().is_multiple_of(dim) {
            return Err(Error::Empty("detector needs at least one reference sample".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive and finite, got {bandwidth}")));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite reference sample".into()));
        }
        let n = reference.len() / dim;
        let d = dim as f64;
        let log_norm = (n as f64).ln() + d * bandwidth.ln() + 0.5 * d * (2.0 * PI).ln();
        let reference = Arc::new(reference);
        let index = Arc::from(evaluator.index(reference.clone(), dim, bandwidth));
        Ok(Self { kind, dim, bandwidth, threshold: None, reference, source, log_norm, evaluator, index })
    }

    /// The same detector queried through another evaluator.
    pub fn with_evaluator(&self, evaluator: Arc<dyn DensityEvaluator>) -> Self {
        let index = Arc::from(evaluator.index(self.reference.clone(), self.dim, self.bandwidth));
        Self { evaluator, index, ..self.clone() }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!("threshold must be finite, got {threshold}")));
        }
        self.threshold = Some(threshold);
        Ok(self)
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.reference.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn evaluator_name(&self) -> &str {
        self.evaluator.name()
    }

    pub fn reference_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.reference.chunks(self.dim)
    }

    /// The calibrated threshold, or an error naming the detector kind.
    pub fn require_threshold(&self) -> Result<f64> {
        self.threshold
            .ok_or_else(|| Error::InvalidArgument(format!("{} detector has no calibrated threshold", self.kind)))
    }

    /// `ln f(x)`. Panics if `x` has the wrong dimension.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "query dimension {} does not match detector dimension {}", x.len(), self.dim);
        self.index.log_kernel_sum(x) - self.log_norm
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        score_from_log_density(self.log_density(x))
    }

    /// Whether `x` belongs to the detector's class: score at or below the
    /// threshold.
    pub fn accepts(&self, x: &[f64]) -> Result<bool> {
        Ok(self.score(x) <= self.require_threshold()?)
    }
}

/// `-ln(max(f, DENSITY_FLOOR))` from `ln f`.
pub fn score_from_log_density(log_density: f64) -> f64 {
    (-log_density).min(SCORE_CAP)
}

pub fn kde_density(detector: &KdeDetector, x: &[f64]) -> f64 {
    detector.density(x)
}

pub fn anomaly_score(detector: &KdeDetector, x: &[f64]) -> f64 {
    detector.score(x)
}

/// Appends `new` to the reference set. Bandwidth and threshold are kept;
/// recalibration is a separate step.
pub fn update_detector(detector: &KdeDetector, new: &RedSet) -> Result<KdeDetector> {
    if new.dim() != detector.dim {
        return Err(Error::SchemaMismatch(format!("update of dimension {}, detector has {}", new.dim(), detector.dim)));
    }
    if new.is_empty() {
        return Ok(detector.clone());
    }
    let mut flat = Vec::with_capacity(detector.reference.len() + new.len() * detector.dim);
    flat.extend_from_slice(&detector.reference);
    flat.extend(new.vectors().flat_map(|e| e.iter().copied()));
    let mut updated = KdeDetector::from_flat(
        detector.kind,
        detector.dim,
        flat,
        detector.bandwidth,
        detector.source.clone(),
        detector.evaluator.clone(),
    )?;
    updated.threshold = detector.threshold;
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d(values: &[f64]) -> RedSet {
        RedSet::from_vectors(1, values.iter().map(|v| vec![*v]).collect(), "t").unwrap()
    }

    #[test]
    fn single_point_unit_bandwidth() {
        let det = KdeDetector::build(DetectorKind::NormalWorkload, &one_d(&[0.5]), 1.0).unwrap();
        assert!((det.density(&[0.5]) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn far_queries_underflow_gracefully() {
        let det = KdeDetector::build(DetectorKind::NormalWorkload, &one_d(&[0.0, 0.1]), 0.2).unwrap();
        assert!(det.density(&[4.2]) < 1e-80);
        assert_eq!(det.score(&[1e6]), SCORE_CAP);
        assert!((SCORE_CAP - (-(DENSITY_FLOOR.ln()))).abs() < 1e-12);
    }

    #[test]
    fn score_identities() {
        assert_eq!(score_from_log_density(0.0), 0.0);
        assert_eq!(score_from_log_density(-5.0), 5.0);
        assert_eq!(score_from_log_density(f64::NEG_INFINITY), SCORE_CAP);
    }

    #[test]
    fn build_validates() {
        let r = one_d(&[0.0]);
        assert!(KdeDetector::build(DetectorKind::KnownAttack, &r, 0.0).is_err());
        assert!(KdeDetector::build(DetectorKind::KnownAttack, &one_d(&[]), 1.0).is_err());
        let det = KdeDetector::build(DetectorKind::KnownAttack, &r, 1.0).unwrap();
        assert!(det.accepts(&[0.0]).is_err());
        assert!(det.with_threshold(f64::INFINITY).is_err());
    }

    #[test]
    fn update_with_empty_set_is_identity() {
        let det = KdeDetector::build(DetectorKind::BenignProgram, &one_d(&[0.0, 1.0]), 0.5).unwrap();
        let same = update_detector(&det, &one_d(&[])).unwrap();
        assert_eq!(det.log_density(&[0.3]), same.log_density(&[0.3]));
    }

    #[test]
    fn update_keeps_threshold_and_raises_density_at_new_point() {
        let det = KdeDetector::build(DetectorKind::BenignProgram, &one_d(&[0.0, 1.0]), 0.5)
            .unwrap()
            .with_threshold(3.0)
            .unwrap();
        let up = update_detector(&det, &one_d(&[5.0])).unwrap();
        assert_eq!(up.threshold(), Some(3.0));
        assert_eq!(up.len(), 3);
        assert!(up.density(&[5.0]) > det.density(&[5.0]));
        assert!(update_detector(&det, &RedSet::new(2, "x")).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [DetectorKind::NormalWorkload, DetectorKind::KnownAttack, DetectorKind::BenignProgram] {
            assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
        }
    }

    proptest! {
        #[test]
        fn density_is_non_negative_and_score_monotone(
            refs in prop::collection::vec(-5.0f64..5.0, 1..20),
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
            bw in 0.05f64..3.0,
        ) {
            let det = KdeDetector::build(DetectorKind::NormalWorkload, &one_d(&refs), bw).unwrap();
            let (fa, fb) = (det.density(&[a]), det.density(&[b]));
            prop_assert!(fa >= 0.0 && fb >= 0.0);
            let (sa, sb) = (det.score(&[a]), det.score(&[b]));
            if det.log_density(&[a]) > det.log_density(&[b]) {
                prop_assert!(sa <= sb);
            }
        }
    }
}
