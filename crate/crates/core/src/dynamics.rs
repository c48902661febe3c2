//! Noise models, the generalized update and the run loop.
//!
//! One step moves every particle toward the representative of its batch:
//!
//! ```text
//! x_{n+1}^{i,l} = x_n^{i,l} − (γ + η_n^{i,l}) (x_n^{i,l} − x̄_n^{[i],l})
//! ```
//!
//! Representatives are computed from the pre-step states. The difference
//! form is used (rather than `(1−γ−η)x + (γ+η)x̄`) so that a particle that
//! is its own representative stays bit-identical.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batching::{sample_partition, BatchPartition, PartitionSchedule};
use crate::consensus::{representative_from_values, RepresentativeRule};
use crate::ensemble::{sample_initial, ParticleEnsemble, RngStream, SamplingBox};
use crate::ergodicity::TransitionRecord;
use crate::error::{config, usage, Error, Result};
use crate::objectives::{BenchmarkObjective, Objective};

/// Whether particles share their noise draw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Independent draws for every particle and coordinate.
    #[default]
    Heterogeneous,
    /// One draw per coordinate, shared by all particles.
    Homogeneous,
}

/// Distribution of a single noise value `η`, always with mean zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    None,
    /// `std · Z`.
    Gaussian { std: f64 },
    /// `decay − exp(drift + vol · Z)` with `decay = exp(drift + vol²/2)`.
    ExponentialGap { decay: f64, drift: f64, vol: f64 },
}

impl NoiseLaw {
    /// Value of `η` for a given standard normal `z`.
    pub fn from_normal(&self, z: f64) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Gaussian { std } => std * z,
            Self::ExponentialGap { decay, drift, vol } => decay - (drift + vol * z).exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::None => 0.0,
            _ => self.from_normal(rng.sample(StandardNormal)),
        }
    }

    /// `sqrt(E η²)`.
    pub fn zeta(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Gaussian { std } => std.abs(),
            Self::ExponentialGap { decay, vol, .. } => decay * (vol * vol).exp_m1().sqrt(),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None) || self.zeta() == 0.0
    }
}

/// Noise law together with how draws are shared.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub law: NoiseLaw,
    pub heterogeneity: Heterogeneity,
}

impl NoiseModel {
    /// Fills an `N × d` row-major matrix with `η_n^{i,l}`.
    pub fn draw_into<R: Rng + ?Sized>(&self, particles: usize, dimension: usize, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        if self.law.is_none() {
            out.resize(particles * dimension, 0.0);
            return;
        }
        match self.heterogeneity {
            Heterogeneity::Heterogeneous => {
                out.extend((0..particles * dimension).map(|_| self.law.sample(rng)));
            }
            Heterogeneity::Homogeneous => {
                let shared: Vec<f64> = (0..dimension).map(|_| self.law.sample(rng)).collect();
                for _ in 0..particles {
                    out.extend_from_slice(&shared);
                }
            }
        }
    }
}

/// Drift rate and noise of a discretization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum SchemeConfig {
    /// `γ` and Gaussian `η` with standard deviation `zeta` (no noise when 0).
    Generalized { gamma: f64, zeta: f64 },
    /// Euler–Maruyama.
    ModelA { lambda: f64, sigma: f64, h: f64 },
    /// Exact drift, then multiplicative noise.
    ModelB { lambda: f64, sigma: f64, h: f64 },
    /// Exact geometric step.
    ModelC { lambda: f64, sigma: f64, h: f64 },
}

/// Resolved per-step parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub gamma: f64,
    pub noise: NoiseLaw,
}

/// Maps a scheme onto the generalized form `(γ, η)`.
pub fn step_params(scheme: &SchemeConfig) -> Result<StepParams> {
    let params = match *scheme {
        SchemeConfig::Generalized { gamma, zeta } => {
            if !(zeta.is_finite() && zeta >= 0.0) {
                return Err(config(format!("zeta must be finite and non-negative, got {zeta}")));
            }
            let noise = if zeta == 0.0 { NoiseLaw::None } else { NoiseLaw::Gaussian { std: zeta } };
            StepParams { gamma, noise }
        }
        SchemeConfig::ModelA { lambda, sigma, h } => {
            check_physical(lambda, sigma, h)?;
            StepParams { gamma: lambda * h, noise: gaussian_or_none(sigma * h.sqrt()) }
        }
        SchemeConfig::ModelB { lambda, sigma, h } => {
            check_physical(lambda, sigma, h)?;
            let decay = (-lambda * h).exp();
            StepParams { gamma: 1.0 - decay, noise: gaussian_or_none(decay * sigma * h.sqrt()) }
        }
        SchemeConfig::ModelC { lambda, sigma, h } => {
            check_physical(lambda, sigma, h)?;
            let decay = (-lambda * h).exp();
            let noise = if sigma == 0.0 {
                NoiseLaw::None
            } else {
                NoiseLaw::ExponentialGap { decay, drift: -(lambda + 0.5 * sigma * sigma) * h, vol: sigma * h.sqrt() }
            };
            StepParams { gamma: -(-lambda * h).exp_m1(), noise }
        }
    };
    if !(params.gamma > 0.0 && params.gamma < 1.0) {
        return Err(config(format!("drift rate gamma = {} must lie in (0, 1)", params.gamma)));
    }
    Ok(params)
}

fn gaussian_or_none(std: f64) -> NoiseLaw {
    if std == 0.0 {
        NoiseLaw::None
    } else {
        NoiseLaw::Gaussian { std }
    }
}

fn check_physical(lambda: f64, sigma: f64, h: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0 && h.is_finite() && h > 0.0 && sigma.is_finite() && sigma >= 0.0) {
        return Err(config(format!("need lambda > 0, h > 0, sigma >= 0; got lambda = {lambda}, sigma = {sigma}, h = {h}")));
    }
    Ok(())
}

/// Objective values of every particle.
pub(crate) fn evaluate_all(ensemble: &ParticleEnsemble, objective: &(impl Objective + ?Sized)) -> Vec<f64> {
    ensemble.rows().map(|x| objective.evaluate(x)).collect()
}

/// Representative of every batch, `K × d` row-major, plus the per-batch weights when asked.
fn batch_representatives(
    ensemble: &ParticleEnsemble,
    partition: &BatchPartition,
    values: &[f64],
    rule: &RepresentativeRule,
    want_weights: bool,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = ensemble.dimension();
    let mut reps = Vec::with_capacity(partition.batches().len() * d);
    let mut weights = Vec::new();
    let mut batch_values = Vec::new();
    for batch in partition.batches() {
        batch_values.clear();
        batch_values.extend(batch.iter().map(|&j| values[j]));
        let r = representative_from_values(ensemble, batch, &batch_values, rule).expect("batches are non-empty");
        reps.extend_from_slice(&r);
        if want_weights {
            weights.push(rule.weights(&batch_values));
        }
    }
    (reps, weights)
}

fn apply_update(
    ensemble: &ParticleEnsemble,
    partition: &BatchPartition,
    reps: &[f64],
    gamma: f64,
    eta: &[f64],
) -> Result<ParticleEnsemble> {
    let d = ensemble.dimension();
    let next_step = ensemble.step() + 1;
    let mut states = Vec::with_capacity(ensemble.states().len());
    for (i, x) in ensemble.rows().enumerate() {
        let k = partition.batch_index(i);
        let rep = &reps[k * d..(k + 1) * d];
        let noise = &eta[i * d..(i + 1) * d];
        for l in 0..d {
            states.push(x[l] - (gamma + noise[l]) * (x[l] - rep[l]));
        }
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: next_step });
    }
    Ok(ParticleEnsemble::from_parts_unchecked(ensemble.particles(), d, states, next_step))
}

fn check_step_inputs(ensemble: &ParticleEnsemble, partition: &BatchPartition, gamma: f64, eta: &[f64]) -> Result<()> {
    if partition.particles() != ensemble.particles() {
        return Err(usage("partition does not cover the ensemble"));
    }
    if eta.len() != ensemble.states().len() {
        return Err(usage("need one noise value per particle and coordinate"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(config(format!("gamma = {gamma} must lie in (0, 1)")));
    }
    Ok(())
}

/// One synchronous step with explicit noise draws (`N × d`, row-major).
pub fn step(
    ensemble: &ParticleEnsemble,
    partition: &BatchPartition,
    rule: &RepresentativeRule,
    objective: &(impl Objective + ?Sized),
    gamma: f64,
    eta: &[f64],
) -> Result<ParticleEnsemble> {
    check_step_inputs(ensemble, partition, gamma, eta)?;
    let values = evaluate_all(ensemble, objective);
    let (reps, _) = batch_representatives(ensemble, partition, &values, rule, false);
    apply_update(ensemble, partition, &reps, gamma, eta)
}

/// Model B written as its two stages: contract toward `x̄`, then add noise
/// proportional to the contracted offset. `z` holds the standard normals (`N × d`).
#[allow(clippy::too_many_arguments)]
pub fn model_b_two_stage_step(
    ensemble: &ParticleEnsemble,
    partition: &BatchPartition,
    rule: &RepresentativeRule,
    objective: &(impl Objective + ?Sized),
    lambda: f64,
    sigma: f64,
    h: f64,
    z: &[f64],
) -> Result<ParticleEnsemble> {
    let values = evaluate_all(ensemble, objective);
    let (reps, _) = batch_representatives(ensemble, partition, &values, rule, false);
    let d = ensemble.dimension();
    let decay = (-lambda * h).exp();
    let mut states = Vec::with_capacity(ensemble.states().len());
    for (i, x) in ensemble.rows().enumerate() {
        let k = partition.batch_index(i);
        let rep = &reps[k * d..(k + 1) * d];
        for l in 0..d {
            let contracted = rep[l] + decay * (x[l] - rep[l]);
            states.push(contracted - (contracted - rep[l]) * sigma * h.sqrt() * z[i * d + l]);
        }
    }
    Ok(ParticleEnsemble::from_parts_unchecked(ensemble.particles(), d, states, ensemble.step() + 1))
}

/// Initial particle positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initialization {
    /// i.i.d. uniform on `[lower, upper]^d`.
    UniformBox { lower: f64, upper: f64 },
    /// Explicit rows, one per particle.
    Explicit { states: Vec<Vec<f64>> },
}

/// Which per-step series a run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordOptions {
    pub diameters: bool,
    pub best_objective: bool,
    pub displacement: bool,
    pub snapshots: bool,
    /// Keeps `W_n`, `η_n` and the partition of every step.
    pub transitions: bool,
    /// Upper bound on stored transition entries, `T · N · (N + d)`.
    pub transition_cap: usize,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            diameters: true,
            best_objective: true,
            displacement: true,
            snapshots: false,
            transitions: false,
            transition_cap: 20_000_000,
        }
    }
}

impl RecordOptions {
    /// Nothing beyond the final state.
    pub fn minimal() -> Self {
        Self { diameters: false, best_objective: false, displacement: false, ..Self::default() }
    }
}

/// Everything needed for one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub particles: usize,
    pub dimension: usize,
    pub objective: BenchmarkObjective,
    pub rule: RepresentativeRule,
    pub scheme: SchemeConfig,
    pub heterogeneity: Heterogeneity,
    pub batch_size: usize,
    pub max_steps: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub init: Initialization,
    pub record: RecordOptions,
}

impl RunConfig {
    /// Rastrigin with minimizer `(1, …, 1)`, `N = 100`, `γ = 0.01`, `ζ = 0.5`,
    /// argmin representatives, uniform start on `[−3, 3]^d`, `ε = 10⁻³`.
    pub fn rastrigin_benchmark(dimension: usize, batch_size: usize) -> Result<Self> {
        Ok(Self {
            particles: 100,
            dimension,
            objective: BenchmarkObjective::Rastrigin(crate::objectives::Rastrigin::standard(dimension)?),
            rule: RepresentativeRule::Argmin,
            scheme: SchemeConfig::Generalized { gamma: 0.01, zeta: 0.5 },
            heterogeneity: Heterogeneity::Heterogeneous,
            batch_size,
            max_steps: 100_000,
            tolerance: 1e-3,
            seed: 0,
            init: Initialization::UniformBox { lower: -3.0, upper: 3.0 },
            record: RecordOptions::minimal(),
        })
    }

    pub fn validate(&self) -> Result<StepParams> {
        if self.particles == 0 || self.dimension == 0 {
            return Err(config("need N >= 1 and d >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.particles {
            return Err(config(format!("batch size must satisfy 1 <= P <= N, got P = {}", self.batch_size)));
        }
        if self.max_steps == 0 {
            return Err(config("max_steps must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(config("tolerance must be positive"));
        }
        if self.objective.dimension() != self.dimension {
            return Err(config(format!(
                "objective dimension {} does not match d = {}",
                self.objective.dimension(),
                self.dimension
            )));
        }
        self.rule.validate()?;
        if let Initialization::Explicit { states } = &self.init {
            if states.len() != self.particles || states.iter().any(|r| r.len() != self.dimension) {
                return Err(config("explicit initial states must be N rows of d values"));
            }
        }
        if self.record.transitions {
            let entries = self
                .max_steps
                .saturating_mul(self.particles)
                .saturating_mul(self.particles + self.dimension);
            if entries > self.record.transition_cap {
                return Err(config(format!(
                    "transition recording needs {entries} entries, above the recording cap {} (transition_cap)",
                    self.record.transition_cap
                )));
            }
        }
        step_params(&self.scheme)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        Ok(NoiseModel { law: step_params(&self.scheme)?.noise, heterogeneity: self.heterogeneity })
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    /// `Σ_i ‖x_{n+1}^i − x_n^i‖² < ε`.
    Tolerance,
    MaxSteps,
    Diverged { step: usize },
}

/// Series recorded during a run; index `n` refers to the state after `n` steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordedSeries {
    /// Column diameters, one vector of length `d` per state.
    pub diameters: Vec<Vec<f64>>,
    pub best_objective: Vec<f64>,
    /// `Σ_i ‖x_{n+1}^i − x_n^i‖²`; entry `n` is the move from state `n` to `n + 1`.
    pub displacement: Vec<f64>,
    pub snapshots: Vec<ParticleEnsemble>,
    pub transitions: Vec<TransitionRecord>,
    pub schedule: PartitionSchedule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub initial: ParticleEnsemble,
    pub final_ensemble: ParticleEnsemble,
    pub final_values: Vec<f64>,
    pub steps: usize,
    pub termination: Termination,
    pub evaluations: u64,
    pub gamma: f64,
    pub rule: RepresentativeRule,
    pub series: RecordedSeries,
    pub record: RecordOptions,
}

impl RunResult {
    /// Lowest-index particle attaining the smallest final objective value.
    pub fn best_index(&self) -> usize {
        crate::consensus::first_argmin(&self.final_values).unwrap_or(0)
    }

    pub fn best_point(&self) -> &[f64] {
        self.final_ensemble.particle(self.best_index())
    }

    pub fn best_value(&self) -> f64 {
        self.final_values[self.best_index()]
    }

    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }
}

/// `min_j L(x_n^j)` for every recorded state.
pub fn best_objective_series(result: &RunResult) -> Result<&[f64]> {
    if !result.record.best_objective {
        return Err(usage("best-objective recording was disabled for this run"));
    }
    Ok(&result.series.best_objective)
}

/// Runs the configured objective; divergence is an error.
pub fn run(config: &RunConfig, rng: &mut RngStream) -> Result<RunResult> {
    let result = run_detailed(config, &config.objective, rng)?;
    match result.termination {
        Termination::Diverged { step } => Err(Error::Divergence { step }),
        _ => Ok(result),
    }
}

/// Runs with any objective; a divergent run comes back with
/// [`Termination::Diverged`] and the series recorded up to that point.
pub fn run_detailed(
    config: &RunConfig,
    objective: &(impl Objective + ?Sized),
    rng: &mut RngStream,
) -> Result<RunResult> {
    let params = config.validate()?;
    if objective.dimension() != config.dimension {
        return Err(crate::error::config("objective dimension does not match the run"));
    }
    let noise = NoiseModel { law: params.noise, heterogeneity: config.heterogeneity };
    let rec = config.record;
    let (n, d) = (config.particles, config.dimension);

    let mut ensemble = match &config.init {
        Initialization::UniformBox { lower, upper } => sample_initial(n, &SamplingBox::cube(d, *lower, *upper)?, rng)?,
        Initialization::Explicit { states } => ParticleEnsemble::from_rows(states)?,
    };
    let initial = ensemble.clone();
    let mut values = evaluate_all(&ensemble, objective);
    let mut evaluations = n as u64;
    let mut series = RecordedSeries::default();
    record_state(&mut series, &rec, &ensemble, &values);

    let full = BatchPartition::full(n);
    let mut eta = Vec::with_capacity(n * d);
    let mut termination = Termination::MaxSteps;
    let mut steps = 0;
    for _ in 0..config.max_steps {
        let partition = if config.batch_size == n { full.clone() } else { sample_partition(n, config.batch_size, rng)? };
        let (reps, weights) = batch_representatives(&ensemble, &partition, &values, &config.rule, rec.transitions);
        noise.draw_into(n, d, rng, &mut eta);
        let next = match apply_update(&ensemble, &partition, &reps, params.gamma, &eta) {
            Ok(next) => next,
            Err(Error::Divergence { step }) => {
                termination = Termination::Diverged { step };
                break;
            }
            Err(e) => return Err(e),
        };
        let disp: f64 = next.states().iter().zip(ensemble.states()).map(|(a, b)| (a - b) * (a - b)).sum();
        if rec.transitions {
            series.transitions.push(TransitionRecord::from_batch_weights(
                ensemble.step(),
                params.gamma,
                &partition,
                &weights,
                eta.clone(),
                d,
            ));
            series.schedule.push(partition);
        }
        if rec.displacement {
            series.displacement.push(disp);
        }
        ensemble = next;
        values = evaluate_all(&ensemble, objective);
        evaluations += n as u64;
        steps += 1;
        record_state(&mut series, &rec, &ensemble, &values);
        if disp < config.tolerance {
            termination = Termination::Tolerance;
            break;
        }
    }

    Ok(RunResult {
        initial,
        final_ensemble: ensemble,
        final_values: values,
        steps,
        termination,
        evaluations,
        gamma: params.gamma,
        rule: config.rule,
        series,
        record: rec,
    })
}

fn record_state(series: &mut RecordedSeries, rec: &RecordOptions, ensemble: &ParticleEnsemble, values: &[f64]) {
    if rec.diameters {
        series.diameters.push(ensemble.column_diameters());
    }
    if rec.best_objective {
        series.best_objective.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    if rec.snapshots {
        series.snapshots.push(ensemble.clone());
    }
}
