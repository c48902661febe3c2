//! Replicated experiments: success-rate tables, decay-exponent fits,
//! theoretical consensus rates, convergence and monotonicity audits.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consensus::RepresentativeRule;
use crate::dynamics::{run_detailed, RunConfig, RunResult, Termination};
use crate::ensemble::RngStream;
use crate::error::{config, usage, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::objectives::{BenchmarkObjective, Rastrigin, Sphere};

/// Cutoff below which a diameter or displacement no longer enters a log fit.
pub const FIT_FLOOR: f64 = 1e-14;

/// Objective family instantiated per dimension, minimizer `(b, …, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ObjectiveFamily {
    Rastrigin { minimizer: f64, offset: f64 },
    Sphere { minimizer: f64 },
}

impl Default for ObjectiveFamily {
    fn default() -> Self {
        Self::Rastrigin { minimizer: 1.0, offset: 0.0 }
    }
}

impl ObjectiveFamily {
    pub fn build(&self, dimension: usize) -> Result<BenchmarkObjective> {
        Ok(match *self {
            Self::Rastrigin { minimizer, offset } => {
                BenchmarkObjective::Rastrigin(Rastrigin::new(vec![minimizer; dimension], offset)?)
            }
            Self::Sphere { minimizer } => BenchmarkObjective::Sphere(Sphere::new(vec![minimizer; dimension])?),
        })
    }
}

/// A grid of (dimension, batch size) cells, each run `replicates` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Dimension, objective and batch size are overridden per cell.
    pub template: RunConfig,
    pub objective: ObjectiveFamily,
    pub dimensions: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub replicates: usize,
    /// Success when the best particle is within this ∞-distance of the minimizer.
    pub threshold: f64,
    pub seed: u64,
}

impl BenchmarkConfig {
    /// `d = 2..=10`, `P ∈ {100, 50, 10}`, Rastrigin with minimizer `(1, …, 1)`.
    pub fn rastrigin_default(replicates: usize) -> Self {
        Self {
            template: RunConfig::rastrigin_benchmark(2, 100).expect("static config"),
            objective: ObjectiveFamily::default(),
            dimensions: (2..=10).collect(),
            batch_sizes: vec![100, 50, 10],
            replicates,
            threshold: 0.25,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(config("replicates must be at least 1"));
        }
        if !(self.threshold > 0.0) {
            return Err(config("success threshold must be positive"));
        }
        if self.dimensions.is_empty() || self.batch_sizes.is_empty() {
            return Err(config("need at least one dimension and one batch size"));
        }
        if self.dimensions.iter().any(|&d| d >= 1 << 16) || self.batch_sizes.iter().any(|&p| p >= 1 << 24) {
            return Err(config("dimension or batch size too large for stream numbering"));
        }
        for &d in &self.dimensions {
            for &p in &self.batch_sizes {
                self.cell_config(d, p)?.validate()?;
            }
        }
        Ok(())
    }

    pub fn cell_config(&self, dimension: usize, batch_size: usize) -> Result<RunConfig> {
        let mut cfg = self.template.clone();
        cfg.dimension = dimension;
        cfg.batch_size = batch_size;
        cfg.objective = self.objective.build(dimension)?;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

/// Stream id of replicate `rep` in cell `(d, P)`.
pub fn replicate_stream(dimension: usize, batch_size: usize, rep: usize) -> u64 {
    ((dimension as u64) << 48) | ((batch_size as u64) << 24) | rep as u64
}

/// The best particle (lowest index among ties) lies within `threshold` of
/// `minimizer` in the ∞-norm. Diverged runs never succeed.
pub fn success(result: &RunResult, minimizer: &[f64], threshold: f64) -> Result<bool> {
    if minimizer.len() != result.final_ensemble.dimension() {
        return Err(config("minimizer dimension does not match the run"));
    }
    if result.diverged() {
        return Ok(false);
    }
    let dist = result.best_point().iter().zip(minimizer).map(|(x, b)| (x - b).abs()).fold(0.0, f64::max);
    Ok(dist < threshold)
}

#[derive(Clone, Debug, PartialEq)]
enum Outcome {
    Finished { success: bool, steps: usize, converged: bool },
    Diverged,
    Failed(String),
}

/// One cell of the benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub dimension: usize,
    pub batch_size: usize,
    pub replicates: usize,
    pub successes: usize,
    /// Successes over all replicates; divergent and failed runs count as failures.
    pub success_rate: f64,
    pub std_error: f64,
    /// Mean step count over runs that did not diverge or fail.
    pub mean_steps: f64,
    /// Runs that met the stopping tolerance before the step limit.
    pub converged: usize,
    pub divergent: usize,
    pub errors: Vec<String>,
    #[serde(skip)]
    pub mean_wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkTable {
    pub dimensions: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

impl BenchmarkTable {
    pub fn cell(&self, dimension: usize, batch_size: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.dimension == dimension && c.batch_size == batch_size)
    }

    fn csv_with(&self, f: impl Fn(&CellResult) -> f64) -> String {
        let mut out = String::from("d");
        for p in &self.batch_sizes {
            out.push_str(&format!(",P={p}"));
        }
        out.push('\n');
        for &d in &self.dimensions {
            out.push_str(&d.to_string());
            for &p in &self.batch_sizes {
                let v = self.cell(d, p).map(&f).unwrap_or(f64::NAN);
                out.push(',');
                out.push_str(&crate::ensemble::format_f64(v));
            }
            out.push('\n');
        }
        out
    }

    /// Success rates, one row per dimension, one column per batch size.
    pub fn success_csv(&self) -> String {
        self.csv_with(|c| c.success_rate)
    }

    pub fn steps_csv(&self) -> String {
        self.csv_with(|c| c.mean_steps)
    }
}

/// Runs every cell. Replicate `r` of cell `(d, P)` draws from stream
/// [`replicate_stream`]`(d, P, r)` of the base seed, so the table does not
/// depend on scheduling.
pub fn benchmark(cfg: &BenchmarkConfig, exec: Execution) -> Result<BenchmarkTable> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> =
        cfg.dimensions.iter().flat_map(|&d| cfg.batch_sizes.iter().map(move |&p| (d, p))).collect();
    let configs: Vec<RunConfig> = cells.iter().map(|&(d, p)| cfg.cell_config(d, p)).collect::<Result<_>>()?;
    let reps = cfg.replicates;
    let outcomes = map_indexed(exec, cells.len() * reps, |k| {
        let (c, rep) = (k / reps, k % reps);
        let (d, p) = cells[c];
        let run_cfg = &configs[c];
        let start = Instant::now();
        let mut rng = RngStream::new(cfg.seed, replicate_stream(d, p, rep));
        let outcome = match run_detailed(run_cfg, &run_cfg.objective, &mut rng) {
            Ok(r) if r.diverged() => Outcome::Diverged,
            Ok(r) => {
                let minimizer = crate::objectives::Objective::minimizer(&run_cfg.objective)
                    .expect("benchmark objectives have a known minimizer");
                match success(&r, minimizer, cfg.threshold) {
                    Ok(s) => Outcome::Finished {
                        success: s,
                        steps: r.steps,
                        converged: r.termination == Termination::Tolerance,
                    },
                    Err(e) => Outcome::Failed(e.to_string()),
                }
            }
            Err(e) => Outcome::Failed(e.to_string()),
        };
        (outcome, start.elapsed().as_secs_f64())
    });

    let cells = cells
        .iter()
        .enumerate()
        .map(|(c, &(d, p))| {
            let chunk = &outcomes[c * reps..(c + 1) * reps];
            let (mut successes, mut divergent, mut converged, mut finished, mut steps) = (0, 0, 0, 0usize, 0.0);
            let mut errors = Vec::new();
            for (o, _) in chunk {
                match o {
                    Outcome::Finished { success, steps: s, converged: conv } => {
                        successes += *success as usize;
                        converged += *conv as usize;
                        finished += 1;
                        steps += *s as f64;
                    }
                    Outcome::Diverged => divergent += 1,
                    Outcome::Failed(e) => errors.push(e.clone()),
                }
            }
            let rate = successes as f64 / reps as f64;
            CellResult {
                dimension: d,
                batch_size: p,
                replicates: reps,
                successes,
                success_rate: rate,
                std_error: (rate * (1.0 - rate) / reps as f64).sqrt(),
                mean_steps: if finished > 0 { steps / finished as f64 } else { f64::NAN },
                converged,
                divergent,
                errors,
                mean_wall_seconds: chunk.iter().map(|(_, t)| t).sum::<f64>() / reps as f64,
            }
        })
        .collect();
    Ok(BenchmarkTable { dimensions: cfg.dimensions.clone(), batch_sizes: cfg.batch_sizes.clone(), seed: cfg.seed, cells })
}

/// Fraction of steps in which some coordinate diameter grew.
pub fn diameter_increase_frequency(result: &RunResult) -> Result<f64> {
    let d = &result.series.diameters;
    if !result.record.diameters {
        return Err(usage("diameter recording was disabled for this run"));
    }
    if d.len() < 2 {
        return Ok(0.0);
    }
    let grew = d.windows(2).filter(|w| w[1].iter().zip(&w[0]).any(|(a, b)| a > b)).count();
    Ok(grew as f64 / (d.len() - 1) as f64)
}

/// Least-squares line `y = intercept + slope · n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    pub points: usize,
}

/// Ordinary least squares of `ys` against `0, 1, …`.
pub fn linear_fit(ys: &[f64]) -> Result<LinearFit> {
    let n = ys.len();
    if n < 3 {
        return Err(Error::Estimation(format!("need at least 3 points to fit, got {n}")));
    }
    let nf = n as f64;
    let xm = (nf - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        let dy = y - ym;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = ys.iter().enumerate().map(|(i, y)| (y - intercept - slope * i as f64).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_std_error = (sse.max(0.0) / (nf - 2.0) / sxx).sqrt();
    Ok(LinearFit { slope, intercept, r_squared, slope_std_error, points: n })
}

/// Fits `log series[n]` against `n`, stopping before the first value below
/// [`FIT_FLOOR`].
pub fn fit_log_series(series: &[f64]) -> Result<LinearFit> {
    let usable = series.iter().position(|v| !(*v >= FIT_FLOOR)).unwrap_or(series.len());
    let logs: Vec<f64> = series[..usable].iter().map(|v| v.ln()).collect();
    linear_fit(&logs)
}

/// Constants of the consensus-rate bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    pub gamma: f64,
    pub particles: usize,
    pub m0: usize,
    pub p_m0: f64,
    pub zeta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoreticalRate {
    pub inputs: RateInputs,
    /// `γ(1−γ)^{m0−1} p_{m0} − 2[(1 + 2√N ζ)^{m0} − 1]`.
    pub margin: f64,
    /// Rate in expectation, `margin / m0²`.
    pub lambda_1: f64,
    /// Supremum of admissible almost-sure rates, `margin / m0`.
    pub lambda_2_sup: f64,
    /// Whether the small-noise condition `margin > 0` holds.
    pub positive: bool,
}

fn rate_margin(i: &RateInputs) -> f64 {
    let drift = i.gamma * (1.0 - i.gamma).powi(i.m0 as i32 - 1) * i.p_m0;
    let noise = 2.0 * ((1.0 + 2.0 * (i.particles as f64).sqrt() * i.zeta).powi(i.m0 as i32) - 1.0);
    drift - noise
}

fn check_rate_inputs(i: &RateInputs) -> Result<()> {
    if !(i.gamma > 0.0 && i.gamma < 1.0) || i.m0 == 0 || i.particles == 0 {
        return Err(config("need 0 < gamma < 1, m0 >= 1 and N >= 1"));
    }
    if !(i.p_m0 >= 0.0 && i.zeta >= 0.0 && i.p_m0.is_finite() && i.zeta.is_finite()) {
        return Err(config("p_m0 and zeta must be finite and non-negative"));
    }
    Ok(())
}

pub fn theoretical_rate(inputs: RateInputs) -> Result<TheoreticalRate> {
    check_rate_inputs(&inputs)?;
    let margin = rate_margin(&inputs);
    let m0 = inputs.m0 as f64;
    Ok(TheoreticalRate { inputs, margin, lambda_1: margin / (m0 * m0), lambda_2_sup: margin / m0, positive: margin > 0.0 })
}

/// The `ζ` at which the small-noise condition stops holding, by bisection to
/// absolute width `1e-12`. The `zeta` field of `inputs` is ignored.
pub fn critical_zeta(inputs: RateInputs) -> Result<f64> {
    check_rate_inputs(&inputs)?;
    let at = |zeta: f64| rate_margin(&RateInputs { zeta, ..inputs });
    if at(0.0) <= 0.0 {
        return Err(Error::Inapplicable("the condition fails already at zeta = 0".into()));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while at(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// One fit per run.
    Pathwise,
    /// One fit of the replicate-averaged diameter.
    Expectation,
}

/// Passed and total bound checks attached to a decay report.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WindowPasses {
    pub passed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub coordinate: usize,
    pub mode: DecayMode,
    /// Per run (pathwise) or a single entry (expectation).
    pub fits: Vec<LinearFit>,
    /// Mean fitted slope of `fits`.
    pub slope: f64,
    /// Standard error of the slope across replicates, from per-run fits;
    /// `None` when fewer than two runs could be fitted.
    pub replicate_std_error: Option<f64>,
    pub theoretical: Option<TheoreticalRate>,
    pub window_passes: Option<WindowPasses>,
}

/// Fits the decay of coordinate `l`'s diameter. Expectation mode averages the
/// diameters across runs at each step (over the common length) before the log.
pub fn estimate_decay(
    results: &[RunResult],
    l: usize,
    mode: DecayMode,
    theory: Option<RateInputs>,
) -> Result<DecayReport> {
    if results.is_empty() {
        return Err(usage("no runs to fit"));
    }
    let mut columns = Vec::with_capacity(results.len());
    for r in results {
        if !r.record.diameters {
            return Err(usage("diameter recording was disabled for a run"));
        }
        if l >= r.final_ensemble.dimension() {
            return Err(usage(format!("coordinate {l} out of range")));
        }
        columns.push(r.series.diameters.iter().map(|d| d[l]).collect::<Vec<f64>>());
    }
    let pathwise: Vec<LinearFit> = columns.iter().filter_map(|c| fit_log_series(c).ok()).collect();
    let replicate_std_error = (pathwise.len() >= 2).then(|| {
        let k = pathwise.len() as f64;
        let mean = pathwise.iter().map(|f| f.slope).sum::<f64>() / k;
        let var = pathwise.iter().map(|f| (f.slope - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    });
    let fits = match mode {
        DecayMode::Pathwise => {
            if pathwise.is_empty() {
                return Err(Error::Estimation("no run has 3 usable diameter points".into()));
            }
            pathwise
        }
        DecayMode::Expectation => {
            let len = columns.iter().map(Vec::len).min().unwrap_or(0);
            let mean: Vec<f64> =
                (0..len).map(|n| columns.iter().map(|c| c[n]).sum::<f64>() / columns.len() as f64).collect();
            vec![fit_log_series(&mean)?]
        }
    };
    let slope = fits.iter().map(|f| f.slope).sum::<f64>() / fits.len() as f64;
    let theoretical = theory.map(theoretical_rate).transpose()?;
    Ok(DecayReport { coordinate: l, mode, fits, slope, replicate_std_error, theoretical, window_passes: None })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `max_i ‖x_{n+1}^i − x_n^i‖_∞` for every recorded step.
    pub displacement: Vec<f64>,
    /// Log-linear fit of the last `tail` displacements; `None` when fewer than
    /// three of them are above the fit floor.
    pub tail_fit: Option<LinearFit>,
    /// Final best particle.
    pub limit_point: Vec<f64>,
    /// Largest coordinate diameter of the final ensemble.
    pub final_diameter: f64,
    /// `max_i ‖x_final^i − limit_point‖_∞`.
    pub max_deviation: f64,
    /// `max_deviation ≤ 10 · final_diameter`.
    pub agree: bool,
}

/// Cauchy-type check on the snapshot trajectory over its last `tail` steps.
pub fn convergence_check(result: &RunResult, tail: usize) -> Result<ConvergenceReport> {
    let snaps = &result.series.snapshots;
    if snaps.len() < 2 {
        return Err(usage("convergence check needs recorded snapshots"));
    }
    if tail == 0 || tail > snaps.len() - 1 {
        return Err(usage(format!("tail window must lie in [1, {}], got {tail}", snaps.len() - 1)));
    }
    let displacement: Vec<f64> = snaps
        .windows(2)
        .map(|w| w[1].states().iter().zip(w[0].states()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    let tail_fit = fit_log_series(&displacement[displacement.len() - tail..]).ok();
    let limit_point = result.best_point().to_vec();
    let final_diameter = result.final_ensemble.column_diameters().into_iter().fold(0.0, f64::max);
    let max_deviation = result
        .final_ensemble
        .rows()
        .map(|x| x.iter().zip(&limit_point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    Ok(ConvergenceReport {
        displacement,
        tail_fit,
        limit_point,
        final_diameter,
        max_deviation,
        agree: max_deviation <= 10.0 * final_diameter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    /// First state index whose best value exceeds its predecessor's.
    pub first_violation: Option<usize>,
    pub steps: usize,
}

/// Exact nonincrease check of a best-objective series.
pub fn audit_series(series: &[f64]) -> AuditReport {
    let first_violation = series.windows(2).position(|w| w[1] > w[0]).map(|k| k + 1);
    AuditReport { pass: first_violation.is_none(), first_violation, steps: series.len().saturating_sub(1) }
}

/// Best-objective nonincrease for argmin-rule runs, compared without tolerance.
pub fn monotonicity_audit(result: &RunResult) -> Result<AuditReport> {
    if !matches!(result.rule, RepresentativeRule::Argmin) {
        return Err(Error::Inapplicable("monotonicity holds only for the argmin rule".into()));
    }
    Ok(audit_series(crate::dynamics::best_objective_series(result)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run, Initialization, RecordOptions, SchemeConfig};
    use proptest::prelude::*;

    fn explicit_run(rows: Vec<Vec<f64>>, batch: usize, scheme: SchemeConfig, rule: RepresentativeRule, steps: usize) -> RunResult {
        let d = rows[0].len();
        let mut cfg = RunConfig::rastrigin_benchmark(d, batch).unwrap();
        cfg.particles = rows.len();
        cfg.init = Initialization::Explicit { states: rows };
        cfg.scheme = scheme;
        cfg.rule = rule;
        cfg.max_steps = steps;
        cfg.tolerance = 1e-300;
        cfg.record = RecordOptions { snapshots: true, ..RecordOptions::default() };
        run(&cfg, &mut RngStream::new(0, 0)).unwrap()
    }

    fn with_final(rows: Vec<Vec<f64>>, values: Vec<f64>) -> RunResult {
        let mut r = explicit_run(rows.clone(), rows.len(), SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 }, RepresentativeRule::Argmin, 1);
        r.final_ensemble = crate::ensemble::ParticleEnsemble::from_rows(&rows).unwrap();
        r.final_values = values;
        r
    }

    #[test]
    fn success_examples() {
        let r = with_final(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![0.0, 2.0]);
        assert!(success(&r, &[1.0, 1.0], 1e-9).unwrap());
        let r = with_final(vec![vec![1.3, 1.0], vec![1.0, 1.0]], vec![0.5, 0.7]);
        assert!(!success(&r, &[1.0, 1.0], 0.25).unwrap());
        // tie: particle 0 is judged even though particle 1 is at the minimizer
        let r = with_final(vec![vec![3.0, 3.0], vec![1.0, 1.0]], vec![0.0, 0.0]);
        assert!(!success(&r, &[1.0, 1.0], 0.25).unwrap());
        let mut r = with_final(vec![vec![1.0, 1.0]], vec![0.0]);
        r.termination = Termination::Diverged { step: 3 };
        assert!(!success(&r, &[1.0, 1.0], 0.25).unwrap());
        assert!(success(&r, &[1.0], 0.25).is_err());
    }

    #[test]
    fn stream_ids_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for d in [2, 4, 10] {
            for p in [10, 50, 100] {
                for r in 0..200 {
                    assert!(seen.insert(replicate_stream(d, p, r)));
                }
            }
        }
    }

    fn small_bench(replicates: usize) -> BenchmarkConfig {
        let mut cfg = BenchmarkConfig::rastrigin_default(replicates);
        cfg.template.particles = 10;
        cfg.template.max_steps = 300;
        cfg.dimensions = vec![2, 3];
        cfg.batch_sizes = vec![10, 5];
        cfg.seed = 4;
        cfg
    }

    #[test]
    fn benchmark_shape_and_single_replicate() {
        let t = benchmark(&small_bench(1), Execution::Sequential).unwrap();
        assert_eq!(t.cells.len(), 4);
        for c in &t.cells {
            assert!(c.success_rate == 0.0 || c.success_rate == 1.0);
        }
        let csv = t.success_csv();
        assert_eq!(csv.lines().next().unwrap(), "d,P=10,P=5");
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn benchmark_is_deterministic_across_execution_modes() {
        let cfg = small_bench(6);
        let mut a = benchmark(&cfg, Execution::Sequential).unwrap();
        let mut b = benchmark(&cfg, Execution::Parallel).unwrap();
        for c in a.cells.iter_mut().chain(b.cells.iter_mut()) {
            c.mean_wall_seconds = 0.0;
        }
        assert_eq!(a, b);
        assert_eq!(a.success_csv(), b.success_csv());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn benchmark_counts_divergence_as_failure() {
        let mut cfg = small_bench(3);
        cfg.template.scheme = SchemeConfig::Generalized { gamma: 0.5, zeta: 1e200 };
        let t = benchmark(&cfg, Execution::Sequential).unwrap();
        for c in &t.cells {
            assert_eq!((c.divergent, c.successes, c.success_rate), (3, 0, 0.0));
        }
    }

    #[test]
    fn benchmark_rejects_bad_config() {
        let mut cfg = small_bench(0);
        assert!(matches!(benchmark(&cfg, Execution::Sequential), Err(Error::Config(_))));
        cfg.replicates = 1;
        cfg.threshold = 0.0;
        assert!(matches!(benchmark(&cfg, Execution::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let ys: Vec<f64> = (0..10).map(|n| 2.0 - 0.5 * n as f64).collect();
        let f = linear_fit(&ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-13);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(matches!(linear_fit(&[1.0, 2.0]), Err(Error::Estimation(_))));
    }

    #[test]
    fn fit_stops_at_floor() {
        let f = fit_log_series(&[1.0, 0.5, 0.25, 0.125, 0.0, 5.0]).unwrap();
        assert_eq!(f.points, 4);
        assert!((f.slope - 0.5f64.ln()).abs() < 1e-14);
        assert!(fit_log_series(&[1.0, 1e-15, 1.0]).is_err());
    }

    #[test]
    fn halving_pair_decays_at_log_half() {
        let r = explicit_run(
            vec![vec![0.0], vec![1.0]],
            2,
            SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 },
            RepresentativeRule::Gibbs { beta: 0.0 },
            30,
        );
        let rep = estimate_decay(&[r], 0, DecayMode::Pathwise, None).unwrap();
        assert!((rep.slope - 0.5f64.ln()).abs() < 1e-6, "{}", rep.slope);
    }

    #[test]
    fn zero_noise_full_batch_decays() {
        for rule in [RepresentativeRule::Argmin, RepresentativeRule::Gibbs { beta: 3.0 }] {
            let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7 - 2.0, 1.5 - 0.4 * i as f64]).collect();
            let r = explicit_run(rows, 6, SchemeConfig::Generalized { gamma: 0.2, zeta: 0.0 }, rule, 60);
            for l in 0..2 {
                assert!(estimate_decay(std::slice::from_ref(&r), l, DecayMode::Pathwise, None).unwrap().slope < 0.0);
            }
        }
    }

    #[test]
    fn expectation_mode_averages_before_the_log() {
        let a = explicit_run(vec![vec![0.0], vec![1.0]], 2, SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 }, RepresentativeRule::Gibbs { beta: 0.0 }, 10);
        let b = explicit_run(vec![vec![0.0], vec![4.0]], 2, SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 }, RepresentativeRule::Gibbs { beta: 0.0 }, 10);
        let rep = estimate_decay(&[a, b], 0, DecayMode::Expectation, None).unwrap();
        assert_eq!(rep.fits.len(), 1);
        assert!((rep.fits[0].intercept - 2.5f64.ln()).abs() < 1e-12);
        assert!((rep.slope - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decay_needs_points() {
        let r = explicit_run(vec![vec![0.0], vec![0.0]], 2, SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 }, RepresentativeRule::Argmin, 5);
        assert!(matches!(estimate_decay(&[r], 0, DecayMode::Pathwise, None), Err(Error::Estimation(_))));
        assert!(matches!(estimate_decay(&[], 0, DecayMode::Pathwise, None), Err(Error::Usage(_))));
    }

    #[test]
    fn full_batch_rate_reduction() {
        let t = theoretical_rate(RateInputs { gamma: 0.3, particles: 5, m0: 1, p_m0: 1.0, zeta: 0.01 }).unwrap();
        let expected = 0.3 - 2.0 * (2.0 * 5f64.sqrt() * 0.01);
        assert!((t.margin - expected).abs() < 1e-15);
        assert_eq!(t.lambda_1, t.margin);
        assert!(t.positive);
    }

    #[test]
    fn zero_noise_rate_is_positive() {
        let t = theoretical_rate(RateInputs { gamma: 0.5, particles: 4, m0: 3, p_m0: 2.0 / 9.0, zeta: 0.0 }).unwrap();
        assert!((t.margin - 0.5 * 0.25 * 2.0 / 9.0).abs() < 1e-15);
        assert!((t.lambda_1 - t.margin / 9.0).abs() < 1e-15);
        assert!((t.lambda_2_sup - t.margin / 3.0).abs() < 1e-15);
        assert!(t.positive);
    }

    fn grid_scan_critical(inputs: RateInputs, step: f64) -> f64 {
        let mut z = 0.0;
        while rate_margin(&RateInputs { zeta: z + step, ..inputs }) > 0.0 {
            z += step;
        }
        z + step / 2.0
    }

    #[test]
    fn critical_zeta_matches_grid_scan() {
        let inputs = RateInputs { gamma: 0.5, particles: 4, m0: 3, p_m0: 2.0 / 9.0, zeta: 0.0 };
        let bisect = critical_zeta(inputs).unwrap();
        let coarse = grid_scan_critical(inputs, 1e-4);
        let fine = grid_scan_critical(RateInputs { zeta: 0.0, ..inputs }, 1e-7);
        assert!((bisect - coarse).abs() < 1e-4);
        assert!((bisect - fine).abs() < 1e-6);
        assert!(rate_margin(&RateInputs { zeta: bisect - 1e-9, ..inputs }) > 0.0);
        assert!(rate_margin(&RateInputs { zeta: bisect + 1e-9, ..inputs }) < 0.0);
    }

    #[test]
    fn audit_examples() {
        let r = audit_series(&[3.0, 2.0, 2.5]);
        assert_eq!((r.pass, r.first_violation), (false, Some(2)));
        assert!(audit_series(&[3.0, 3.0, 1.0]).pass);
        let gibbs = explicit_run(vec![vec![0.0], vec![1.0]], 2, SchemeConfig::Generalized { gamma: 0.5, zeta: 0.0 }, RepresentativeRule::Gibbs { beta: 1.0 }, 3);
        assert!(matches!(monotonicity_audit(&gibbs), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn argmin_runs_pass_audit() {
        for seed in 0..5 {
            let mut cfg = RunConfig::rastrigin_benchmark(3, 5).unwrap();
            cfg.particles = 20;
            cfg.max_steps = 300;
            cfg.record = RecordOptions::default();
            let r = run(&cfg, &mut RngStream::new(seed, 0)).unwrap();
            assert!(monotonicity_audit(&r).unwrap().pass);
        }
    }

    #[test]
    fn constant_ensemble_has_zero_displacement() {
        let r = explicit_run(vec![vec![0.5, 0.5]; 4], 4, SchemeConfig::Generalized { gamma: 0.3, zeta: 0.0 }, RepresentativeRule::Argmin, 10);
        assert_eq!(r.steps, 1);
        let c = convergence_check(&r, 1).unwrap();
        assert!(c.displacement.iter().all(|v| *v == 0.0));
        assert!(c.tail_fit.is_none());
        assert_eq!(c.max_deviation, 0.0);
        assert!(c.agree);
    }

    #[test]
    fn zero_noise_argmin_converges_to_initial_best() {
        // the initial best sits at the minimizer, so no particle can overtake it
        let rows = vec![vec![0.9, 1.1], vec![-2.0, 2.5], vec![1.0, 1.0], vec![-1.0, -1.0]];
        let mut cfg = RunConfig::rastrigin_benchmark(2, 4).unwrap();
        cfg.particles = 4;
        cfg.objective = BenchmarkObjective::Sphere(Sphere::new(vec![1.0, 1.0]).unwrap());
        cfg.init = Initialization::Explicit { states: rows };
        cfg.scheme = SchemeConfig::Generalized { gamma: 0.4, zeta: 0.0 };
        cfg.max_steps = 200;
        cfg.tolerance = 1e-300;
        cfg.record = RecordOptions { snapshots: true, ..RecordOptions::default() };
        let r = run(&cfg, &mut RngStream::new(0, 0)).unwrap();
        let c = convergence_check(&r, 50).unwrap();
        assert_eq!(c.limit_point, vec![1.0, 1.0]);
        for x in r.final_ensemble.rows() {
            for a in x {
                assert!((a - 1.0).abs() < 1e-12);
            }
        }
        let early = convergence_check(&r, 20).unwrap();
        assert!(fit_log_series(&early.displacement[..20]).unwrap().slope < 0.0);
    }

    #[test]
    fn convergence_needs_snapshots() {
        let mut cfg = RunConfig::rastrigin_benchmark(2, 4).unwrap();
        cfg.particles = 4;
        cfg.max_steps = 10;
        let r = run(&cfg, &mut RngStream::new(0, 0)).unwrap();
        assert!(matches!(convergence_check(&r, 5), Err(Error::Usage(_))));
    }

    #[test]
    fn diameter_increase_frequency_zero_without_noise() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 - 2.5]).collect();
        let r = explicit_run(rows, 3, SchemeConfig::Generalized { gamma: 0.2, zeta: 0.0 }, RepresentativeRule::Gibbs { beta: 1.0 }, 50);
        assert_eq!(diameter_increase_frequency(&r).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn success_is_monotone_in_threshold(seed in 0u64..500, t1 in 0.01f64..2.0, t2 in 0.01f64..2.0) {
            let mut cfg = RunConfig::rastrigin_benchmark(2, 5).unwrap();
            cfg.particles = 10;
            cfg.max_steps = 200;
            let r = run(&cfg, &mut RngStream::new(seed, 0)).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let b = [1.0, 1.0];
            prop_assert!(!success(&r, &b, lo).unwrap() || success(&r, &b, hi).unwrap());
        }

        #[test]
        fn critical_zeta_separates_the_condition(gamma in 0.05f64..0.95, n in 1usize..20, m0 in 1usize..6, p in 0.05f64..1.0) {
            let inputs = RateInputs { gamma, particles: n, m0, p_m0: p, zeta: 0.0 };
            let z = critical_zeta(inputs).unwrap();
            let below = theoretical_rate(RateInputs { zeta: z * 0.999, ..inputs }).unwrap();
            let above = theoretical_rate(RateInputs { zeta: z * 1.001 + 1e-9, ..inputs }).unwrap();
            prop_assert!(below.positive && !above.positive);
        }
    }
}
