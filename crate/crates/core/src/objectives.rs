//! Objective functions to minimize.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// A deterministic real-valued function on `R^d`.
pub trait Objective: Send + Sync {
    fn dimension(&self) -> usize;

    /// Value at `x`. Callers guarantee `x.len() == self.dimension()`.
    fn evaluate(&self, x: &[f64]) -> f64;

    /// Known global minimizer, when there is one.
    fn minimizer(&self) -> Option<&[f64]> {
        None
    }
}

fn check_dims(x: &[f64], shift: &[f64]) -> Result<()> {
    if x.len() != shift.len() {
        return Err(config(format!(
            "dimension mismatch: point has {} coordinates, objective expects {}",
            x.len(),
            shift.len()
        )));
    }
    Ok(())
}

/// Shifted, dimension-averaged Rastrigin function with global minimum `offset` at `shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rastrigin {
    shift: Vec<f64>,
    offset: f64,
}

impl Rastrigin {
    pub fn new(shift: Vec<f64>, offset: f64) -> Result<Self> {
        if shift.is_empty() {
            return Err(config("rastrigin dimension must be positive"));
        }
        if !offset.is_finite() || shift.iter().any(|b| !b.is_finite()) {
            return Err(config("rastrigin shift and offset must be finite"));
        }
        Ok(Self { shift, offset })
    }

    /// Minimizer at `(1, …, 1)` with minimum value 0.
    pub fn standard(dimension: usize) -> Result<Self> {
        Self::new(vec![1.0; dimension], 0.0)
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.shift.len() as f64;
        let sum: f64 = x
            .iter()
            .zip(&self.shift)
            .map(|(xi, bi)| {
                let y = xi - bi;
                y * y - 10.0 * (2.0 * PI * y).cos() + 10.0
            })
            .sum();
        sum / d + self.offset
    }
}

impl Objective for Rastrigin {
    fn dimension(&self) -> usize {
        self.shift.len()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        self.value_unchecked(x)
    }

    fn minimizer(&self) -> Option<&[f64]> {
        Some(&self.shift)
    }
}

/// `(1/d) Σ [(x_i − B_i)² − 10 cos(2π(x_i − B_i)) + 10] + C`.
pub fn rastrigin(x: &[f64], spec: &Rastrigin) -> Result<f64> {
    check_dims(x, &spec.shift)?;
    Ok(spec.value_unchecked(x))
}

/// Shifted sphere `Σ (x_i − s_i)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    shift: Vec<f64>,
}

impl Sphere {
    pub fn new(shift: Vec<f64>) -> Result<Self> {
        if shift.is_empty() {
            return Err(config("sphere dimension must be positive"));
        }
        if shift.iter().any(|s| !s.is_finite()) {
            return Err(config("sphere shift must be finite"));
        }
        Ok(Self { shift })
    }
}

impl Objective for Sphere {
    fn dimension(&self) -> usize {
        self.shift.len()
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.shift).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn minimizer(&self) -> Option<&[f64]> {
        Some(&self.shift)
    }
}

pub fn sphere(x: &[f64], shift: &[f64]) -> Result<f64> {
    check_dims(x, shift)?;
    Ok(x.iter().zip(shift).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// The objectives selectable from an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BenchmarkObjective {
    Rastrigin(Rastrigin),
    Sphere(Sphere),
}

impl Objective for BenchmarkObjective {
    fn dimension(&self) -> usize {
        match self {
            Self::Rastrigin(f) => f.dimension(),
            Self::Sphere(f) => f.dimension(),
        }
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            Self::Rastrigin(f) => f.evaluate(x),
            Self::Sphere(f) => f.evaluate(x),
        }
    }

    fn minimizer(&self) -> Option<&[f64]> {
        match self {
            Self::Rastrigin(f) => f.minimizer(),
            Self::Sphere(f) => f.minimizer(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rastrigin_minimum_at_shift() {
        let f = Rastrigin::new(vec![1.0, -2.0, 0.5], 0.0).unwrap();
        assert_eq!(rastrigin(&[1.0, -2.0, 0.5], &f).unwrap(), 0.0);
        let g = Rastrigin::new(vec![1.0; 4], 3.5).unwrap();
        assert_eq!(g.evaluate(&[1.0; 4]), 3.5);
    }

    #[test]
    fn rastrigin_direct_values() {
        // 0.25 − 10cos(π) + 10
        let f = Rastrigin::new(vec![0.0], 0.0).unwrap();
        assert!((rastrigin(&[0.5], &f).unwrap() - 20.25).abs() < 1e-12);
        // (1/2)(1 − 10 + 10 + 0)
        let g = Rastrigin::new(vec![0.0, 0.0], 0.0).unwrap();
        assert!((rastrigin(&[1.0, 0.0], &g).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let f = Rastrigin::standard(3).unwrap();
        assert!(matches!(rastrigin(&[0.0; 2], &f), Err(crate::Error::Config(_))));
        assert!(matches!(sphere(&[0.0; 2], &[0.0]), Err(crate::Error::Config(_))));
        assert!(Rastrigin::standard(0).is_err());
    }

    #[test]
    fn sphere_values() {
        assert_eq!(sphere(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(sphere(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 25.0);
        assert_eq!(sphere(&[-1.0], &[1.0]).unwrap(), 4.0);
    }

    proptest! {
        #[test]
        fn rastrigin_bounded_below_by_offset(
            x in prop::collection::vec(-50.0f64..50.0, 1..8),
            c in -5.0f64..5.0,
        ) {
            let f = Rastrigin::new(vec![1.0; x.len()], c).unwrap();
            prop_assert!(f.evaluate(&x) >= c - 1e-12);
        }

        #[test]
        fn rastrigin_permutation_invariant(
            pts in prop::collection::vec((-10.0f64..10.0, -3.0f64..3.0), 2..8),
            rot in 0usize..8,
        ) {
            let (x, b): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let k = rot % x.len();
            let mut xr = x.clone();
            let mut br = b.clone();
            xr.rotate_left(k);
            br.rotate_left(k);
            let f = Rastrigin::new(b, 0.7).unwrap();
            let g = Rastrigin::new(br, 0.7).unwrap();
            prop_assert!((f.evaluate(&x) - g.evaluate(&xr)).abs() < 1e-9);
        }
    }
}
