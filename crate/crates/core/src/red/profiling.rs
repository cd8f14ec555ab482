//! Building calibrated detectors from reconstruction errors.

use super::{
    bandwidth_rule, calibrate_eer_threshold, calibrate_normal_threshold, evaluator, DetectorKind, KdeDetector, RedSet,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    /// Fraction of normal validation errors the normal detector accepts.
    pub coverage: f64,
    /// Bandwidth rule name or a fixed positive value.
    pub bandwidth: String,
    pub evaluator: String,
    /// Reference sets are thinned by a fixed stride to at most this many
    /// samples; 0 keeps everything. Validation sets for the equal-error
    /// thresholds are thinned to twice this.
    pub max_reference: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { coverage: 0.80, bandwidth: "scott".into(), evaluator: "exact".into(), max_reference: 2000 }
    }
}

/// An uncalibrated detector over the pooled `parts`.
pub fn reference_detector(
    kind: DetectorKind,
    parts: &[&RedSet],
    opts: &ProfileOptions,
    provenance: &str,
) -> Result<KdeDetector> {
    let reference = RedSet::concat(parts, provenance)?.subsample(opts.max_reference);
    let b = bandwidth_rule(&opts.bandwidth)?.bandwidth(&reference)?;
    KdeDetector::build_with(kind, &reference, b, evaluator(&opts.evaluator)?)
}

/// The normal-workload detector with its coverage threshold.
pub fn profile_normal(train: &[&RedSet], validation: &[&RedSet], opts: &ProfileOptions) -> Result<KdeDetector> {
    let det = reference_detector(DetectorKind::NormalWorkload, train, opts, "workloads")?;
    let val = RedSet::concat(validation, "workload validation")?;
    let theta = calibrate_normal_threshold(&det, &val, opts.coverage)?;
    log::info!("normal detector: {} references, b={}, threshold={theta}", det.len(), det.bandwidth());
    det.with_threshold(theta)
}

/// Attack and benign detectors, each thresholded at the equal-error point
/// against the other class's validation errors.
pub fn profile_step2(
    attack_train: &[&RedSet],
    attack_validation: &[&RedSet],
    benign_train: &[&RedSet],
    benign_validation: &[&RedSet],
    opts: &ProfileOptions,
) -> Result<(KdeDetector, KdeDetector)> {
    if attack_train.is_empty() || benign_train.is_empty() {
        return Err(Error::Empty("step 2 needs attack and benign reference errors".into()));
    }
    let thin = opts.max_reference.saturating_mul(2);
    let attack_val = RedSet::concat(attack_validation, "attack validation")?.subsample(thin);
    let benign_val = RedSet::concat(benign_validation, "benign validation")?.subsample(thin);
    let attack = reference_detector(DetectorKind::KnownAttack, attack_train, opts, "known attacks")?;
    let benign = reference_detector(DetectorKind::BenignProgram, benign_train, opts, "benign programs")?;
    let theta_a = calibrate_eer_threshold(&attack, &attack_val, &benign_val)?;
    let theta_b = calibrate_eer_threshold(&benign, &benign_val, &attack_val)?;
    log::info!(
        "step-2 detectors: attack n={} b={} threshold={theta_a}; benign n={} b={} threshold={theta_b}",
        attack.len(),
        attack.bandwidth(),
        benign.len(),
        benign.bandwidth()
    );
    Ok((attack.with_threshold(theta_a)?, benign.with_threshold(theta_b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(center: f64, n: usize) -> RedSet {
        let v = (0..n).map(|i| vec![center + 0.01 * (i % 17) as f64, center - 0.02 * (i % 5) as f64]).collect();
        RedSet::from_vectors(2, v, "t").unwrap()
    }

    #[test]
    fn separated_classes_accept_their_own() {
        let opts = ProfileOptions::default();
        let (a_tr, a_va, b_tr, b_va) = (set(5.0, 80), set(5.0, 40), set(-5.0, 80), set(-5.0, 40));
        let (attack, benign) = profile_step2(&[&a_tr], &[&a_va], &[&b_tr], &[&b_va], &opts).unwrap();
        assert!(attack.accepts(&[5.0, 5.0]).unwrap());
        assert!(!attack.accepts(&[-5.0, -5.0]).unwrap());
        assert!(benign.accepts(&[-5.0, -5.0]).unwrap());
        assert!(!benign.accepts(&[5.0, 5.0]).unwrap());
    }

    #[test]
    fn normal_threshold_covers_the_requested_share() {
        let opts = ProfileOptions::default();
        let (tr, va) = (set(0.0, 100), set(0.0, 85));
        let det = profile_normal(&[&tr], &[&va], &opts).unwrap();
        let accepted = va.vectors().filter(|e| det.accepts(e).unwrap()).count() as f64 / va.len() as f64;
        assert!((accepted - 0.8).abs() <= 1.0 / va.len() as f64 + 0.05);
        assert!(profile_step2(&[], &[&va], &[&tr], &[&va], &opts).is_err());
    }
}
