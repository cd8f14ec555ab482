//! Kernel bandwidth rules.

use std::sync::Arc;

use super::RedSet;
use crate::error::{Error, Result};
use crate::registry::Registry;

pub trait BandwidthRule: Send + Sync {
    fn name(&self) -> String;

    fn bandwidth(&self, reference: &RedSet) -> Result<f64>;
}

/// Mean over dimensions of the sample standard deviation.
fn mean_std(reference: &RedSet) -> Result<f64> {
    let n = reference.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth rule needs at least 2 reference samples, got {n}; use a fixed bandwidth"
        )));
    }
    let d = reference.dim();
    let mut total = 0.0;
    for k in 0..d {
        let mean = reference.vectors().map(|e| e[k]).sum::<f64>() / n as f64;
        let var = reference.vectors().map(|e| (e[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        total += var.sqrt();
    }
    let sigma = total / d as f64;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument("reference errors have zero spread; use a fixed bandwidth".into()));
    }
    Ok(sigma)
}

/// `b = n^(-1/(d+4)) * sigma`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Scott;

impl BandwidthRule for Scott {
    fn name(&self) -> String {
        "scott".into()
    }

    fn bandwidth(&self, reference: &RedSet) -> Result<f64> {
        let d = reference.dim() as f64;
        Ok((reference.len() as f64).powf(-1.0 / (d + 4.0)) * mean_std(reference)?)
    }
}

/// `b = (4/(d+2))^(1/(d+4)) * n^(-1/(d+4)) * sigma`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Silverman;

impl BandwidthRule for Silverman {
    fn name(&self) -> String {
        "silverman".into()
    }

    fn bandwidth(&self, reference: &RedSet) -> Result<f64> {
        let d = reference.dim() as f64;
        let factor = (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0));
        Ok(factor * (reference.len() as f64).powf(-1.0 / (d + 4.0)) * mean_std(reference)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedBandwidth(pub f64);

impl BandwidthRule for FixedBandwidth {
    fn name(&self) -> String {
        self.0.to_string()
    }

    fn bandwidth(&self, _reference: &RedSet) -> Result<f64> {
        Ok(self.0)
    }
}

pub fn bandwidth_registry() -> Registry<dyn BandwidthRule> {
    let mut r: Registry<dyn BandwidthRule> = Registry::new();
    r.register("scott", Arc::new(Scott));
    r.register("silverman", Arc::new(Silverman));
    r
}

/// A registered rule name, or a positive number for a fixed bandwidth.
pub fn bandwidth_rule(spec: &str) -> Result<Arc<dyn BandwidthRule>> {
    let registry = bandwidth_registry();
    match registry.get(spec) {
        Ok(rule) => Ok(rule),
        Err(unknown) => match spec.parse::<f64>() {
            Ok(b) if b > 0.0 && b.is_finite() => Ok(Arc::new(FixedBandwidth(b))),
            Ok(b) => Err(Error::InvalidArgument(format!("bandwidth must be positive and finite, got {b}"))),
            Err(_) => Err(unknown),
        },
    }
}
