//! Score thresholds.
//!
//! A detector answers "yes, this belongs to my class" when the anomaly
//! score is at or below its threshold.

use super::{KdeDetector, RedSet};
use crate::error::{Error, Result};

pub fn scores(detector: &KdeDetector, set: &RedSet) -> Vec<f64> {
    set.vectors().map(|e| detector.score(e)).collect()
}

/// Linear-interpolated order statistic (`h = (n-1) q`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of no values".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// The `coverage` quantile of the detector's scores on validation data.
pub fn calibrate_normal_threshold(detector: &KdeDetector, validation: &RedSet, coverage: f64) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set for threshold calibration".into()));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::InvalidArgument(format!("coverage {coverage} outside (0, 1)")));
    }
    quantile(&scores(detector, validation), coverage)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerPoint {
    pub threshold: f64,
    /// Fraction of negatives at or below the threshold.
    pub fpr: f64,
    /// Fraction of positives above the threshold.
    pub fnr: f64,
}

pub fn error_rates(positives: &[f64], negatives: &[f64], threshold: f64) -> (f64, f64) {
    let fp = negatives.iter().filter(|s| **s <= threshold).count();
    let fn_ = positives.iter().filter(|s| **s > threshold).count();
    (fp as f64 / negatives.len() as f64, fn_ as f64 / positives.len() as f64)
}

/// Equal-error threshold over the candidates `min - 1`, the midpoints between
/// adjacent distinct pooled scores, and `max + 1`. Minimizes `|FPR - FNR|`,
/// then FPR, then the threshold.
pub fn eer_threshold(positives: &[f64], negatives: &[f64]) -> Result<EerPoint> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty("equal-error calibration needs positive and negative scores".into()));
    }
    if positives.iter().chain(negatives).any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score".into()));
    }
    let mut pos = positives.to_vec();
    let mut neg = negatives.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();

    let mut candidates = Vec::with_capacity(pooled.len() + 1);
    candidates.push(pooled[0] - 1.0);
    candidates.extend(pooled.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(pooled[pooled.len() - 1] + 1.0);

    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut best: Option<(f64, EerPoint)> = None;
    for theta in candidates {
        let fpr = neg.partition_point(|s| *s <= theta) as f64 / nn;
        let fnr = (pos.len() - pos.partition_point(|s| *s <= theta)) as f64 / np;
        let gap = (fpr - fnr).abs();
        let point = EerPoint { threshold: theta, fpr, fnr };
        let better = match &best {
            None => true,
            Some((g, b)) => gap < *g || (gap == *g && (fpr < b.fpr || (fpr == b.fpr && theta < b.threshold))),
        };
        if better {
            best = Some((gap, point));
        }
    }
    Ok(best.expect("at least two candidates").1)
}

/// Equal-error threshold separating the detector's own class (`positives`)
/// from the opposite class (`negatives`).
pub fn calibrate_eer_threshold(detector: &KdeDetector, positives: &RedSet, negatives: &RedSet) -> Result<f64> {
    Ok(eer_threshold(&scores(detector, positives), &scores(detector, negatives))?.threshold)
}
