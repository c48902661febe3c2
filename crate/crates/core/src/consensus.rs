//! Consensus weights and per-batch representative points.

use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{config, usage, Result};
use crate::objectives::Objective;

/// How a batch picks the point its members drift toward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RepresentativeRule {
    /// Convex combination with weights `∝ exp(−β L)`.
    Gibbs { beta: f64 },
    /// State of the lowest-index particle attaining the batch minimum.
    Argmin,
}

impl RepresentativeRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gibbs { beta } if !(beta.is_finite() && beta >= 0.0) => {
                Err(config(format!("gibbs beta must be finite and non-negative, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Weights over a batch given the objective values of its members, in member order.
    pub fn weights(&self, values: &[f64]) -> Vec<f64> {
        match *self {
            Self::Gibbs { beta } => gibbs_weights(values, beta),
            Self::Argmin => {
                let mut w = vec![0.0; values.len()];
                if let Some(k) = first_argmin(values) {
                    w[k] = 1.0;
                }
                w
            }
        }
    }
}

/// Position of the first minimum; ties are exact float equality.
pub(crate) fn first_argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(k),
        }
    }
    best
}

/// `ω_j = exp(−β(L_j − L_min)) / Σ_k exp(−β(L_k − L_min))`.
///
/// Shifting by the minimum leaves the weights unchanged and keeps the
/// largest exponential at 1, so the denominator never underflows.
pub fn gibbs_weights(values: &[f64], beta: f64) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = values.iter().map(|v| (-beta * (v - min)).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Representative point of `batch` when the objective values are already known.
///
/// `values[k]` must be the objective at particle `batch[k]`.
pub fn representative_from_values(
    ensemble: &ParticleEnsemble,
    batch: &[usize],
    values: &[f64],
    rule: &RepresentativeRule,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(usage("representative of an empty batch"));
    }
    if batch.len() != values.len() {
        return Err(usage("one objective value per batch member is required"));
    }
    match rule {
        RepresentativeRule::Argmin => {
            let mut best = 0;
            for k in 1..batch.len() {
                let better = values[k] < values[best] || (values[k] == values[best] && batch[k] < batch[best]);
                if better {
                    best = k;
                }
            }
            Ok(ensemble.particle(batch[best]).to_vec())
        }
        RepresentativeRule::Gibbs { beta } => {
            if batch.len() == 1 {
                return Ok(ensemble.particle(batch[0]).to_vec());
            }
            let w = gibbs_weights(values, *beta);
            let mut out = vec![0.0; ensemble.dimension()];
            for (&j, wj) in batch.iter().zip(&w) {
                for (o, x) in out.iter_mut().zip(ensemble.particle(j)) {
                    *o += wj * x;
                }
            }
            Ok(out)
        }
    }
}

/// Representative point `x̄^{S,*}` of the index set `batch`.
pub fn representative(
    ensemble: &ParticleEnsemble,
    batch: &[usize],
    rule: &RepresentativeRule,
    objective: &(impl Objective + ?Sized),
) -> Result<Vec<f64>> {
    if let Some(&bad) = batch.iter().find(|&&j| j >= ensemble.particles()) {
        return Err(usage(format!("particle {bad} out of range")));
    }
    let values: Vec<f64> = batch.iter().map(|&j| objective.evaluate(ensemble.particle(j))).collect();
    representative_from_values(ensemble, batch, &values, rule)
}
