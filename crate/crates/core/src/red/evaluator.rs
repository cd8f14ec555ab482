//! Strategies for evaluating the Gaussian kernel sum
//! `ln sum_i exp(-|x - x_i|^2 / (2 b^2))`.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::registry::Registry;

/// Builds a query structure over a reference set.
pub trait DensityEvaluator: Send + Sync {
    fn name(&self) -> &str;

    /// `reference` is row-major with `dim` columns.
    fn index(&self, reference: Arc<Vec<f64>>, dim: usize, bandwidth: f64) -> Box<dyn DensityIndex>;
}

pub trait DensityIndex: Send + Sync + fmt::Debug {
    /// Log of the unnormalized kernel sum at `x`.
    fn log_kernel_sum(&self, x: &[f64]) -> f64;
}

/// Streaming log-sum-exp over `exponents`.
fn log_sum_exp(exponents: impl Iterator<Item = f64>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for a in exponents {
        if a > max {
            sum = sum * (max - a).exp() + 1.0;
            max = a;
        } else {
            sum += (a - max).exp();
        }
    }
    if sum == 0.0 {
        f64::NEG_INFINITY
    } else {
        max + sum.ln()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sums every kernel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEvaluator;

#[derive(Debug)]
struct ExactIndex {
    reference: Arc<Vec<f64>>,
    dim: usize,
    inv_two_b2: f64,
}

impl ExactIndex {
    fn rows(&self, range: std::ops::Range<usize>, x: &[f64]) -> f64 {
        let d = self.dim;
        log_sum_exp(range.map(|i| -sq_dist(&self.reference[i * d..(i + 1) * d], x) * self.inv_two_b2))
    }
}

impl DensityIndex for ExactIndex {
    fn log_kernel_sum(&self, x: &[f64]) -> f64 {
        self.rows(0..self.reference.len() / self.dim, x)
    }
}

impl DensityEvaluator for ExactEvaluator {
    fn name(&self) -> &str {
        "exact"
    }

    fn index(&self, reference: Arc<Vec<f64>>, dim: usize, bandwidth: f64) -> Box<dyn DensityIndex> {
        Box::new(ExactIndex { reference, dim, inv_two_b2: 1.0 / (2.0 * bandwidth * bandwidth) })
    }
}

/// Skips references whose projection on the widest axis is farther than
/// `radius_factor * b` from the query. Each skipped kernel is below
/// `exp(-radius_factor^2 / 2)`; when the bound on the skipped mass exceeds
/// `tolerance` relative to the kept mass the query is summed exactly.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedEvaluator {
    pub radius_factor: f64,
    pub tolerance: f64,
}

impl Default for TruncatedEvaluator {
    fn default() -> Self {
        Self { radius_factor: 10.0, tolerance: 1e-9 }
    }
}

#[derive(Debug)]
struct TruncatedIndex {
    exact: ExactIndex,
    axis: usize,
    /// Reference rows sorted by their coordinate on `axis`.
    sorted: ExactIndex,
    keys: Vec<f64>,
    radius: f64,
    log_skip_kernel: f64,
    log_tolerance: f64,
}

impl DensityIndex for TruncatedIndex {
    fn log_kernel_sum(&self, x: &[f64]) -> f64 {
        let q = x[self.axis];
        let lo = self.keys.partition_point(|k| *k < q - self.radius);
        let hi = self.keys.partition_point(|k| *k <= q + self.radius);
        let skipped = self.keys.len() - (hi - lo);
        let kept = self.sorted.rows(lo..hi, x);
        if skipped == 0 {
            return kept;
        }
        let bound = (skipped as f64).ln() + self.log_skip_kernel;
        if bound - kept > self.log_tolerance {
            self.exact.log_kernel_sum(x)
        } else {
            kept
        }
    }
}

impl DensityEvaluator for TruncatedEvaluator {
    fn name(&self) -> &str {
        "truncated"
    }

    fn index(&self, reference: Arc<Vec<f64>>, dim: usize, bandwidth: f64) -> Box<dyn DensityIndex> {
        let n = reference.len() / dim;
        let spread = |k: usize| {
            let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = reference[i * dim + k];
                (lo.min(v), hi.max(v))
            });
            hi - lo
        };
        let axis = (0..dim).max_by(|a, b| spread(*a).total_cmp(&spread(*b))).unwrap_or(0);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| reference[a * dim + axis].total_cmp(&reference[b * dim + axis]));
        let keys = order.iter().map(|i| reference[i * dim + axis]).collect();
        let sorted_rows: Vec<f64> =
            order.iter().flat_map(|i| reference[i * dim..(i + 1) * dim].iter().copied()).collect();
        let inv_two_b2 = 1.0 / (2.0 * bandwidth * bandwidth);
        Box::new(TruncatedIndex {
            exact: ExactIndex { reference, dim, inv_two_b2 },
            axis,
            sorted: ExactIndex { reference: Arc::new(sorted_rows), dim, inv_two_b2 },
            keys,
            radius: self.radius_factor * bandwidth,
            log_skip_kernel: -0.5 * self.radius_factor * self.radius_factor,
            log_tolerance: self.tolerance.ln(),
        })
    }
}

pub fn evaluator_registry() -> Registry<dyn DensityEvaluator> {
    let mut r: Registry<dyn DensityEvaluator> = Registry::new();
    r.register("exact", Arc::new(ExactEvaluator));
    r.register("truncated", Arc::new(TruncatedEvaluator::default()));
    r
}

/// Looks up a registered evaluator by name.
pub fn evaluator(name: &str) -> Result<Arc<dyn DensityEvaluator>> {
    evaluator_registry().get(name)
}
