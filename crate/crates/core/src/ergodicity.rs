//! Transition matrices of the linearized dynamics and the ergodicity-coefficient
//! bounds that control consensus.
//!
//! For coordinate `l` one step reads `x_{n+1} = (A_n + B_n^l) x_n` with
//! `A_n = (1−γ)I + γW_n` and `B_n^l = −H_n^l (I − W_n)`, where `W_n` holds the
//! batch weights and `H_n^l = diag(η_n^{·,l})`.
//!
//! Products follow `Π_{k=a}^{b} M_k = M_b ⋯ M_a`: later steps multiply on the left.
//!
//! Every check is reported as `lhs ≤ rhs` and passes when
//! `rhs − lhs ≥ −BOUND_TOLERANCE`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::batching::{connectivity_count, BatchPartition, PartitionSchedule};
use crate::dynamics::RunResult;
use crate::ensemble::{diameter, RngStream};
use crate::error::{usage, Error, Result};
use crate::exec::{map_indexed, Execution};

/// Absolute tolerance for every bound check.
pub const BOUND_TOLERANCE: f64 = 1e-10;

/// Weights, noise and partition of one recorded step.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub step: usize,
    pub gamma: f64,
    pub partition: BatchPartition,
    /// `W_n`: row `i` is the weight vector of the batch holding `i`.
    pub weights: DMatrix<f64>,
    eta: Vec<f64>,
    dimension: usize,
}

impl TransitionRecord {
    /// Assembles `W_n` from per-batch weights (in batch member order).
    pub fn from_batch_weights(
        step: usize,
        gamma: f64,
        partition: &BatchPartition,
        batch_weights: &[Vec<f64>],
        eta: Vec<f64>,
        dimension: usize,
    ) -> Self {
        let n = partition.particles();
        let mut w = DMatrix::zeros(n, n);
        for (batch, weights) in partition.batches().iter().zip(batch_weights) {
            for &i in batch {
                for (&j, &wj) in batch.iter().zip(weights) {
                    w[(i, j)] = wj;
                }
            }
        }
        Self { step, gamma, partition: partition.clone(), weights: w, eta, dimension }
    }

    pub fn particles(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `η_n^{i,l}`.
    pub fn eta(&self, i: usize, l: usize) -> f64 {
        self.eta[i * self.dimension + l]
    }

    /// `A_n = (1−γ)I + γW_n`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let n = self.particles();
        DMatrix::identity(n, n) * (1.0 - self.gamma) + &self.weights * self.gamma
    }

    /// `B_n^l = −H_n^l (I − W_n)`.
    pub fn b_matrix(&self, l: usize) -> DMatrix<f64> {
        let n = self.particles();
        let mut b = DMatrix::identity(n, n) - &self.weights;
        for i in 0..n {
            let h = -self.eta(i, l);
            b.row_mut(i).scale_mut(h);
        }
        b
    }

    /// `A_n + B_n^l`, the exact one-step map of coordinate `l`.
    pub fn full_matrix(&self, l: usize) -> DMatrix<f64> {
        self.a_matrix() + self.b_matrix(l)
    }

    /// `‖H_n^l‖_{1,∞} = max_i |η_n^{i,l}|`.
    pub fn noise_norm(&self, l: usize) -> f64 {
        (0..self.particles()).map(|i| self.eta(i, l).abs()).fold(0.0, f64::max)
    }
}

/// `α(A) = min_{i,j} Σ_k min(a_ik, a_jk)`, with `i = j` included.
pub fn ergodicity_coefficient(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..a.ncols()).map(|k| a[(i, k)].min(a[(j, k)])).sum();
            best = best.min(s);
        }
    }
    best
}

/// `‖A‖_{1,∞} = max_i Σ_j |a_ij|`.
pub fn mixed_norm_1_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `M_last ⋯ M_first` for matrices given in time order. Empty input gives `I`.
pub fn ordered_product<'a>(n: usize, mats: impl IntoIterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    mats.into_iter().fold(DMatrix::identity(n, n), |acc, m| m * acc)
}

/// Outcome of one inequality check, `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub check: &'static str,
    pub window: [usize; 2],
    pub coordinate: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn new(check: &'static str, window: [usize; 2], coordinate: Option<usize>, lhs: f64, rhs: f64) -> Self {
        let slack = rhs - lhs;
        Self { check, window, coordinate, lhs, rhs, slack, pass: slack >= -BOUND_TOLERANCE }
    }
}

/// `𝒟(Az) ≤ (a − α(A)) 𝒟(z)` for `A` with common row sum `a`.
pub fn diameter_contraction_check(a: &DMatrix<f64>, z: &[f64]) -> Result<BoundReport> {
    if a.nrows() != a.ncols() || a.nrows() != z.len() || z.is_empty() {
        return Err(usage("need a square matrix matching the vector length"));
    }
    let sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let common = sums[0];
    if sums.iter().any(|s| (s - common).abs() > 1e-10) {
        return Err(Error::Precondition("row sums are not equal".into()));
    }
    let az = a * nalgebra::DVector::from_column_slice(z);
    let lhs = diameter(az.as_slice())?;
    let rhs = (common - ergodicity_coefficient(a)) * diameter(z)?;
    Ok(BoundReport::new("diameter_contraction", [0, 1], None, lhs, rhs))
}

fn window_bounds(records: &[TransitionRecord]) -> Result<(usize, usize, usize)> {
    let first = records.first().ok_or_else(|| usage("empty window of transition records"))?;
    for (k, r) in records.iter().enumerate() {
        if r.step != first.step + k {
            return Err(usage(format!("transition records are not consecutive at step {}", r.step)));
        }
    }
    Ok((first.step, records.len(), first.particles()))
}

fn window_connectivity(records: &[TransitionRecord]) -> usize {
    let schedule = PartitionSchedule::new(records.iter().map(|r| r.partition.clone()).collect());
    connectivity_count(&schedule, 0, records.len()).expect("window within schedule")
}

/// `γ(1−γ)^{m−1}`.
fn drift_factor(gamma: f64, m: usize) -> f64 {
    gamma * (1.0 - gamma).powi(m as i32 - 1)
}

/// `α(A_{n+m−1} ⋯ A_n) ≥ γ(1−γ)^{m−1} 𝒢_{[n,n+m)}`.
pub fn product_alpha_lower_bound_noise_free(records: &[TransitionRecord]) -> Result<BoundReport> {
    let (start, m, n) = window_bounds(records)?;
    let gamma = records[0].gamma;
    let a: Vec<DMatrix<f64>> = records.iter().map(|r| r.a_matrix()).collect();
    let alpha = ergodicity_coefficient(&ordered_product(n, &a));
    let bound = drift_factor(gamma, m) * window_connectivity(records) as f64;
    Ok(BoundReport::new("product_alpha_noise_free", [start, start + m], None, bound, alpha))
}

/// `ℋ = 2[Π_r (1 + 2‖H_r^l‖_{1,∞}) − 1]`; zero for an empty window.
pub fn noise_statistic_h(records: &[TransitionRecord], l: usize) -> f64 {
    2.0 * (records.iter().map(|r| 1.0 + 2.0 * r.noise_norm(l)).product::<f64>() - 1.0)
}

/// Perturbed-product bounds for coordinate `l` over the window:
///
/// * `α(Π(A+B)) ≥ γ(1−γ)^{m−1}𝒢 − ℋ`
/// * `α(M) ≥ −2‖M‖_{1,∞}` for `M = Π(A+B) − ΠA`
/// * `‖Π(A+B) − ΠA‖ ≤ Π(‖A‖+‖B‖) − Π‖A‖`
pub fn perturbed_product_alpha_bound(records: &[TransitionRecord], l: usize) -> Result<Vec<BoundReport>> {
    let (start, m, n) = window_bounds(records)?;
    if l >= records[0].dimension() {
        return Err(usage(format!("coordinate {l} out of range")));
    }
    let gamma = records[0].gamma;
    let a: Vec<DMatrix<f64>> = records.iter().map(|r| r.a_matrix()).collect();
    let b: Vec<DMatrix<f64>> = records.iter().map(|r| r.b_matrix(l)).collect();
    let ab: Vec<DMatrix<f64>> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let prod_a = ordered_product(n, &a);
    let prod_ab = ordered_product(n, &ab);
    let diff = &prod_ab - &prod_a;
    let window = [start, start + m];

    let bound = drift_factor(gamma, m) * window_connectivity(records) as f64 - noise_statistic_h(records, l);
    let perturbed = BoundReport::new("perturbed_product_alpha", window, Some(l), bound, ergodicity_coefficient(&prod_ab));

    let diff_norm = mixed_norm_1_inf(&diff);
    let negative_alpha = BoundReport::new("alpha_lower_by_norm", window, Some(l), -2.0 * diff_norm, ergodicity_coefficient(&diff));

    let norms_sum: f64 = a.iter().zip(&b).map(|(x, y)| mixed_norm_1_inf(x) + mixed_norm_1_inf(y)).product();
    let norms_a: f64 = a.iter().map(mixed_norm_1_inf).product();
    let product_difference = BoundReport::new("product_difference_norm", window, Some(l), diff_norm, norms_sum - norms_a);

    Ok(vec![perturbed, negative_alpha, product_difference])
}

/// Windowed diameter bounds along a recorded trajectory, windows of length `m`
/// starting at step 0. For every complete window `[km, (k+1)m)`:
///
/// * `𝒟(x_{(k+1)m}) ≤ (1 − α(Π(A+B))) 𝒟(x_{km})`, reported as `one_window_diameter`;
/// * the accumulated bound `𝒟(x_n) ≤ 𝒟(x_0)(1 + ℋ_{[km,n)}) Π_{s≤k}(1 − γ(1−γ)^{m−1}𝒢_s + ℋ_s)`
///   at every `n` in the window, reported once per window at its tightest `n`
///   as `accumulated_diameter`.
pub fn window_diameter_bound_check(result: &RunResult, m: usize, l: usize) -> Result<Vec<BoundReport>> {
    let records = &result.series.transitions;
    let diameters = &result.series.diameters;
    if m == 0 {
        return Err(usage("window length must be positive"));
    }
    if records.is_empty() || diameters.len() < records.len() + 1 {
        return Err(usage("run did not record transitions and diameters"));
    }
    if l >= result.final_ensemble.dimension() {
        return Err(usage(format!("coordinate {l} out of range")));
    }
    let n = result.final_ensemble.particles();
    let gamma = result.gamma;
    let d0 = diameters[0][l];
    let windows = records.len() / m;
    let mut out = Vec::with_capacity(2 * windows);
    let mut accumulated = 1.0;
    for k in 0..windows {
        let win = &records[k * m..(k + 1) * m];
        let mats: Vec<DMatrix<f64>> = win.iter().map(|r| r.full_matrix(l)).collect();

        // accumulated bound for n in [km, (k+1)m)
        let mut worst: Option<BoundReport> = None;
        for j in 0..m {
            let step = k * m + j;
            let rhs = d0 * (1.0 + noise_statistic_h(&win[..j], l)) * accumulated;
            let report = BoundReport::new("accumulated_diameter", [step, step + 1], Some(l), diameters[step][l], rhs);
            if worst.as_ref().is_none_or(|w| report.slack < w.slack) {
                worst = Some(report);
            }
        }
        let mut worst = worst.expect("m >= 1");
        worst.window = [k * m, (k + 1) * m];
        out.push(worst);

        let alpha = ergodicity_coefficient(&ordered_product(n, &mats));
        let rhs = (1.0 - alpha) * diameters[k * m][l];
        out.push(BoundReport::new("one_window_diameter", [k * m, (k + 1) * m], Some(l), diameters[(k + 1) * m][l], rhs));

        let g = window_connectivity(win) as f64;
        accumulated *= 1.0 - drift_factor(gamma, m) * g + noise_statistic_h(win, l);
    }
    Ok(out)
}

/// Every per-window check on a recorded trajectory for coordinate `l`.
pub fn verify_trajectory(result: &RunResult, m: usize, l: usize) -> Result<Vec<BoundReport>> {
    let records = &result.series.transitions;
    if records.len() < m || m == 0 {
        return Err(usage(format!("need at least one complete window of {m} recorded steps")));
    }
    let n = result.final_ensemble.particles();
    let mut out = Vec::new();
    for win in records.chunks_exact(m) {
        out.push(product_alpha_lower_bound_noise_free(win)?);
        out.extend(perturbed_product_alpha_bound(win, l)?);
        let start = win[0].step;
        let mats: Vec<DMatrix<f64>> = win.iter().map(|r| r.full_matrix(l)).collect();
        let z = column_at(result, start, l)?;
        let mut rep = diameter_contraction_check(&ordered_product(n, &mats), &z)?;
        rep.window = [start, start + m];
        rep.coordinate = Some(l);
        out.push(rep);
    }
    out.extend(window_diameter_bound_check(result, m, l)?);
    Ok(out)
}

fn column_at(result: &RunResult, step: usize, l: usize) -> Result<Vec<f64>> {
    if let Some(snap) = result.series.snapshots.get(step) {
        return snap.column(l);
    }
    // rebuild from the initial state by replaying recorded one-step maps
    let mut z = result.initial.column(l)?;
    for r in result.series.transitions.iter().take(step) {
        let v = r.full_matrix(l) * nalgebra::DVector::from_vec(z);
        z = v.as_slice().to_vec();
    }
    Ok(z)
}

/// Property families checked on random matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixProperty {
    /// `α(A+B) ≥ α(A) + α(B)`.
    SuperAdditivity,
    /// `α(tA) = tα(A)` for `t ≥ 0`.
    Homogeneity,
    /// `A ≥ B` entrywise implies `α(A) ≥ α(B)`.
    Monotonicity,
    /// `𝒟(Az) ≤ (a − α(A))𝒟(z)` for equal row sums `a`.
    DiameterContraction,
    /// `α(A) ≥ −2‖A‖_{1,∞}`.
    AlphaLowerByNorm,
    /// `‖Π(A+B) − ΠA‖ ≤ Π(‖A‖+‖B‖) − Π‖A‖`.
    ProductDifferenceNorm,
}

impl MatrixProperty {
    pub const ALL: [MatrixProperty; 6] = [
        Self::SuperAdditivity,
        Self::Homogeneity,
        Self::Monotonicity,
        Self::DiameterContraction,
        Self::AlphaLowerByNorm,
        Self::ProductDifferenceNorm,
    ];
}

/// Tally of a randomized property suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub property: MatrixProperty,
    pub cases: usize,
    pub violations: usize,
    pub worst_slack: f64,
}

fn random_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0))
}

fn random_row_stochastic<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| {
        // sparse rows exercise the zero-overlap case
        if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) }
    });
    for i in 0..n {
        let s: f64 = m.row(i).sum();
        if s == 0.0 {
            m[(i, rng.random_range(0..n))] = 1.0;
        } else {
            m.row_mut(i).scale_mut(1.0 / s);
        }
    }
    m
}

/// Slack of one random instance (negative means violated).
fn property_case(property: MatrixProperty, rng: &mut RngStream, max_n: usize) -> f64 {
    let n = rng.random_range(1..=max_n);
    match property {
        MatrixProperty::SuperAdditivity => {
            let (a, b) = (random_matrix(rng, n), random_matrix(rng, n));
            ergodicity_coefficient(&(&a + &b)) - ergodicity_coefficient(&a) - ergodicity_coefficient(&b)
        }
        MatrixProperty::Homogeneity => {
            let a = random_matrix(rng, n);
            let t = rng.random_range(0.0..10.0);
            -(ergodicity_coefficient(&(&a * t)) - t * ergodicity_coefficient(&a)).abs()
        }
        MatrixProperty::Monotonicity => {
            let a = random_matrix(rng, n);
            let gap = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
            let b = &a - gap;
            ergodicity_coefficient(&a) - ergodicity_coefficient(&b)
        }
        MatrixProperty::DiameterContraction => {
            let a = if rng.random_bool(0.5) {
                random_row_stochastic(rng, n)
            } else {
                // signed entries shifted so every row sums to the same value
                let mut m = random_matrix(rng, n);
                let target = rng.random_range(-2.0..2.0);
                for i in 0..n {
                    let shift = (target - m.row(i).sum()) / n as f64;
                    m.row_mut(i).add_scalar_mut(shift);
                }
                m
            };
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            diameter_contraction_check(&a, &z).map(|r| r.slack).unwrap_or(f64::NEG_INFINITY)
        }
        MatrixProperty::AlphaLowerByNorm => {
            let a = random_matrix(rng, n);
            ergodicity_coefficient(&a) + 2.0 * mixed_norm_1_inf(&a)
        }
        MatrixProperty::ProductDifferenceNorm => {
            let n = n.min(6);
            let len = rng.random_range(1..=5);
            let a: Vec<DMatrix<f64>> = (0..len).map(|_| random_matrix(rng, n)).collect();
            let b: Vec<DMatrix<f64>> = (0..len).map(|_| random_matrix(rng, n) * rng.random_range(0.0..1.0)).collect();
            let ab: Vec<DMatrix<f64>> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = mixed_norm_1_inf(&(ordered_product(n, &ab) - ordered_product(n, &a)));
            let pab: f64 = a.iter().zip(&b).map(|(x, y)| mixed_norm_1_inf(x) + mixed_norm_1_inf(y)).product();
            let pa: f64 = a.iter().map(mixed_norm_1_inf).product();
            // relative to the size of the products involved
            (pab - pa - lhs) / pab.max(1.0)
        }
    }
}

/// Checks `property` on `cases` random instances with up to `max_n` rows.
/// Case `k` draws from stream `(seed, k)`.
pub fn random_property_suite(
    property: MatrixProperty,
    cases: usize,
    max_n: usize,
    seed: u64,
    exec: Execution,
) -> SuiteSummary {
    let slacks = map_indexed(exec, cases, |k| {
        let mut rng = RngStream::new(seed, k as u64);
        property_case(property, &mut rng, max_n.max(1))
    });
    let violations = slacks.iter().filter(|s| **s < -BOUND_TOLERANCE).count();
    let worst_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    SuiteSummary { property, cases, violations, worst_slack }
}
