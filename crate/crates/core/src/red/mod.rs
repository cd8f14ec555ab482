//! Reconstruction errors, their distributions, and the KDE detectors built
//! over them.

mod bandwidth;
mod evaluator;
mod kde;
mod profile_file;
mod profiling;
mod threshold;

pub use bandwidth::{bandwidth_registry, bandwidth_rule, BandwidthRule, FixedBandwidth, Scott, Silverman};
pub use evaluator::{
    evaluator, evaluator_registry, DensityEvaluator, DensityIndex, ExactEvaluator, TruncatedEvaluator,
};
pub use kde::{
    anomaly_score, kde_density, score_from_log_density, update_detector, DetectorKind, KdeDetector, DENSITY_FLOOR,
    SCORE_CAP,
};
pub use profile_file::{detector_from_text, detector_to_text, load_detector, save_detector};
pub use profiling::{profile_normal, profile_step2, reference_detector, ProfileOptions};
pub use threshold::{
    calibrate_eer_threshold, calibrate_normal_threshold, eer_threshold, error_rates, quantile, scores, EerPoint,
};

use crate::error::{Error, Result};
use crate::predictor::SequencePredictor;
use crate::trace::{BehaviorSample, Trace, NUM_EVENTS};

/// One reconstruction error `E = normalize(R) - P`, stamped with the time of
/// the observed sample `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RedSample {
    pub t_ms: f64,
    pub e: Vec<f64>,
}

/// A reconstruction error distribution: the errors of one or more traces.
#[derive(Debug, Clone, PartialEq)]
pub struct RedSet {
    dim: usize,
    samples: Vec<RedSample>,
    pub provenance: String,
}

impl RedSet {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        Self { dim, samples: Vec::new(), provenance: provenance.into() }
    }

    /// Builds a set from plain vectors, stamped `0, 1, 2, ...`.
    pub fn from_vectors(dim: usize, vectors: Vec<Vec<f64>>, provenance: impl Into<String>) -> Result<Self> {
        let mut set = Self::new(dim, provenance);
        for (i, e) in vectors.into_iter().enumerate() {
            set.push(RedSample { t_ms: i as f64, e })?;
        }
        Ok(set)
    }

    pub fn push(&mut self, sample: RedSample) -> Result<()> {
        if sample.e.len() != self.dim {
            return Err(Error::SchemaMismatch(format!(
                "error vector of dimension {}, set has {}",
                sample.e.len(),
                self.dim
            )));
        }
        if sample.e.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite reconstruction error at t={} ms", sample.t_ms)));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn extend(&mut self, other: &RedSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::SchemaMismatch(format!("cannot merge dimension {} into {}", other.dim, self.dim)));
        }
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    /// Concatenates sets of equal dimension.
    pub fn concat(sets: &[&RedSet], provenance: impl Into<String>) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::Empty("no reconstruction error sets".into()))?;
        let mut out = Self::new(first.dim, provenance);
        for s in sets {
            out.extend(s)?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[RedSample] {
        &self.samples
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.e.as_slice())
    }

    /// Every `ceil(len / max)`-th sample, so at most `max` remain.
    pub fn subsample(&self, max: usize) -> RedSet {
        if max == 0 || self.len() <= max {
            return self.clone();
        }
        let stride = self.len().div_ceil(max);
        RedSet {
            dim: self.dim,
            samples: self.samples.iter().step_by(stride).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

fn check_model(model: &dyn SequencePredictor) -> Result<()> {
    if model.input_dim() != NUM_EVENTS {
        return Err(Error::SchemaMismatch(format!(
            "model has {} inputs, traces have {NUM_EVENTS} events",
            model.input_dim()
        )));
    }
    Ok(())
}

/// Errors of every one-step prediction over a trace: `N - L` samples.
pub fn compute_red(model: &dyn SequencePredictor, trace: &Trace) -> Result<RedSet> {
    check_model(model)?;
    let l = model.history_len();
    if trace.len() <= l {
        return Err(Error::TooShort(format!("{} samples, history length is {l}", trace.len())));
    }
    let norm = model.normalizer();
    let mut flat = vec![0.0; trace.len() * NUM_EVENTS];
    for (s, chunk) in trace.samples().iter().zip(flat.chunks_mut(NUM_EVENTS)) {
        norm.normalize_into(&s.counts, chunk);
    }
    let mut set = RedSet::new(NUM_EVENTS, trace.label.to_string());
    for t in l..trace.len() {
        let p = model.predict_normalized(&flat[(t - l) * NUM_EVENTS..t * NUM_EVENTS]);
        let r = &flat[t * NUM_EVENTS..(t + 1) * NUM_EVENTS];
        let e = r.iter().zip(&p).map(|(r, p)| r - p).collect();
        set.push(RedSample { t_ms: trace.samples()[t].t_ms, e })?;
    }
    Ok(set)
}

/// The error of predicting `target` from `history` (exactly `L` samples).
pub fn red_at(model: &dyn SequencePredictor, history: &[BehaviorSample], target: &BehaviorSample) -> Result<RedSample> {
    check_model(model)?;
    if history.len() != model.history_len() {
        return Err(Error::SchemaMismatch(format!(
            "history of {} samples, model expects {}",
            history.len(),
            model.history_len()
        )));
    }
    let norm = model.normalizer();
    let mut flat = vec![0.0; history.len() * NUM_EVENTS];
    for (s, chunk) in history.iter().zip(flat.chunks_mut(NUM_EVENTS)) {
        norm.normalize_into(&s.counts, chunk);
    }
    let p = model.predict_normalized(&flat);
    let r = norm.normalize(&target.counts);
    let e = r.iter().zip(&p).map(|(r, p)| r - p).collect();
    Ok(RedSample { t_ms: target.t_ms, e })
}

/// Euclidean norm of each error vector.
pub fn red_magnitude(red: &RedSet) -> Vec<f64> {
    red.vectors().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{LstmModel, Normalizer};
    use crate::trace::{ScenarioLabel, TraceSource};

    fn trace(rows: &[[f64; NUM_EVENTS]]) -> Trace {
        let samples = rows.iter().enumerate().map(|(i, r)| BehaviorSample::new(i as f64 * 10.0, *r)).collect();
        Trace::new(samples, 10.0, ScenarioLabel::workload("w"), TraceSource::Derived("test".into())).unwrap()
    }

    /// A frozen model whose prediction is its readout bias, whatever the
    /// history.
    fn fixed_model(p_norm: f64, norm: Normalizer, l: usize) -> LstmModel {
        let mut m = LstmModel::zeros(NUM_EVENTS, 2, l, norm);
        m.readout_bias_mut().iter_mut().for_each(|b| *b = p_norm);
        m
    }

    #[test]
    fn red_of_fixed_prediction() {
        let norm = Normalizer { mean: vec![1.0; NUM_EVENTS], std: vec![2.0; NUM_EVENTS] };
        let model = fixed_model(0.25, norm.clone(), 2);
        let rows: Vec<[f64; NUM_EVENTS]> = (0..6).map(|i| [i as f64 * 3.0; NUM_EVENTS]).collect();
        let t = trace(&rows);
        let red = compute_red(&model, &t).unwrap();
        assert_eq!(red.len(), 4);
        for (k, s) in red.samples().iter().enumerate() {
            let expected = (rows[k + 2][0] - 1.0) / 2.0 - 0.25;
            assert!(s.e.iter().all(|v| *v == expected));
            assert_eq!(s.t_ms, (k + 2) as f64 * 10.0);
        }
        let single = red_at(&model, &t.samples()[1..3], &t.samples()[3]).unwrap();
        assert_eq!(single, red.samples()[1]);
    }

    #[test]
    fn short_trace_is_rejected() {
        let model = fixed_model(0.0, Normalizer::identity(NUM_EVENTS), 3);
        let t = trace(&[[1.0; NUM_EVENTS]; 3]);
        assert!(matches!(compute_red(&model, &t), Err(Error::TooShort(_))));
    }

    #[test]
    fn magnitudes() {
        let mut v = vec![0.0; NUM_EVENTS];
        let zero = v.clone();
        v[0] = 3.0;
        v[1] = 4.0;
        let mut unit = vec![0.0; NUM_EVENTS];
        unit[7] = 1.0;
        let set = RedSet::from_vectors(NUM_EVENTS, vec![zero, unit, v], "m").unwrap();
        assert_eq!(red_magnitude(&set), vec![0.0, 1.0, 5.0]);
    }

    #[test]
    fn push_validates() {
        let mut set = RedSet::new(2, "x");
        assert!(set.push(RedSample { t_ms: 0.0, e: vec![1.0] }).is_err());
        assert!(set.push(RedSample { t_ms: 0.0, e: vec![1.0, f64::NAN] }).is_err());
        assert!(set.push(RedSample { t_ms: 0.0, e: vec![1.0, 2.0] }).is_ok());
    }

    #[test]
    fn subsample_keeps_at_most_max() {
        let set = RedSet::from_vectors(1, (0..10).map(|i| vec![i as f64]).collect(), "s").unwrap();
        let sub = set.subsample(4);
        assert_eq!(sub.vectors().map(|v| v[0]).collect::<Vec<_>>(), vec![0.0, 3.0, 6.0, 9.0]);
        assert_eq!(set.subsample(0).len(), 10);
    }
}
