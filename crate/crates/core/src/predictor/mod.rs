//! Next-sample predictors over behavior histories.

mod lstm;
mod model_file;

pub use lstm::{grad_check, train, windows_from_trace, LstmModel, TrainConfig, TrainReport, Window};
pub use model_file::{load_model, save_model};

use crate::error::{Error, Result};
use crate::trace::{BehaviorSample, Trace, NUM_EVENTS};

/// Floor applied to per-event standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-event z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    /// Pools every sample of every trace.
    pub fn fit(traces: &[&Trace]) -> Result<Self> {
        let n: usize = traces.iter().map(|t| t.len()).sum();
        if n == 0 {
            return Err(Error::Empty("no samples to fit normalization".into()));
        }
        let mut mean = vec![0.0; NUM_EVENTS];
        for s in traces.iter().flat_map(|t| t.samples()) {
            for (m, v) in mean.iter_mut().zip(&s.counts) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; NUM_EVENTS];
        for s in traces.iter().flat_map(|t| t.samples()) {
            for k in 0..NUM_EVENTS {
                var[k] += (s.counts[k] - mean[k]).powi(2);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.mean[k]) / self.std[k];
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(k, v)| v * self.std[k] + self.mean[k]).collect()
    }
}

/// A model that maps a fixed-length history to the next sample.
pub trait SequencePredictor: Send + Sync {
    fn name(&self) -> &str;

    fn history_len(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn normalizer(&self) -> &Normalizer;

    /// `history` holds `history_len()` normalized samples, flattened row by
    /// row; the result is the normalized prediction for the following sample.
    fn predict_normalized(&self, history: &[f64]) -> Vec<f64>;
}

/// Predicts the next sample (in counter units) from the last `L` samples.
pub fn predict_next(model: &dyn SequencePredictor, history: &[BehaviorSample]) -> Result<Vec<f64>> {
    if history.len() != model.history_len() {
        return Err(Error::SchemaMismatch(format!(
            "history of {} samples, model expects {}",
            history.len(),
            model.history_len()
        )));
    }
    if model.input_dim() != NUM_EVENTS {
        return Err(Error::SchemaMismatch(format!(
            "model has {} inputs, samples have {NUM_EVENTS}",
            model.input_dim()
        )));
    }
    let norm = model.normalizer();
    let mut flat = vec![0.0; history.len() * NUM_EVENTS];
    for (s, chunk) in history.iter().zip(flat.chunks_mut(NUM_EVENTS)) {
        norm.normalize_into(&s.counts, chunk);
    }
    Ok(norm.denormalize(&model.predict_normalized(&flat)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalize_round_trip(
            x in prop::collection::vec(-1e6f64..1e6, NUM_EVENTS),
            mean in prop::collection::vec(-1e3f64..1e3, NUM_EVENTS),
            std in prop::collection::vec(1e-3f64..1e3, NUM_EVENTS),
        ) {
            let n = Normalizer { mean, std };
            let back = n.denormalize(&n.normalize(&x));
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
