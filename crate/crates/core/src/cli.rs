//! Command-line front end.
//!
//! Every data file starts with the seed, the config hash and the resolved
//! config, and is a pure function of `(config, seed)`. Wall-clock timings go
//! to a separate `timing.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::batching::{estimate_p_m0, exact_p_m0, find_m0, m0_greedy_upper_bound};
use crate::config::{EstimateMode, ExperimentConfig};
use crate::consensus::RepresentativeRule;
use crate::dynamics::{run_detailed, RunConfig, RunResult, Termination};
use crate::ensemble::{format_f64, RngStream};
use crate::ergodicity::{noise_statistic_h, random_property_suite, verify_trajectory, BoundReport, MatrixProperty, SuiteSummary};
use crate::error::{Error, Result};
use crate::exec::{with_jobs, Execution};
use crate::harness::{
    benchmark, convergence_check, critical_zeta, diameter_increase_frequency, estimate_decay, monotonicity_audit,
    theoretical_rate, DecayMode, RateInputs, WindowPasses,
};

/// Stated in every output: the noise shape behind `zeta` is an assumption.
const NOISE_ASSUMPTION: &str = "gaussian";

#[derive(Debug, Parser)]
#[command(name = "rbcbo", version, about = "Consensus-based optimization with random batches and heterogeneous noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one optimization and write the final ensemble, series and summary.
    Optimize(CommonArgs),
    /// Success-rate and step-count tables over dimensions and batch sizes.
    Benchmark(CommonArgs),
    /// Instrumented run with every per-window bound check and decay fits.
    Diagnostics(CommonArgs),
    /// Covering window length, expected connectivity and theoretical rates.
    PartitionStats(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Base seed, overriding the config.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for replicates.
    #[arg(long, value_name = "K")]
    pub jobs: Option<usize>,
    /// Replicate count, overriding the subcommand's config section.
    #[arg(long, value_name = "M")]
    pub replicates: Option<usize>,
    /// Run replicates on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a command; `Ok(status)` when all files were written.
pub fn execute(command: &Command) -> Result<i32> {
    let (args, kind) = match command {
        Command::Optimize(a) => (a, "optimize"),
        Command::Benchmark(a) => (a, "benchmark"),
        Command::Diagnostics(a) => (a, "diagnostics"),
        Command::PartitionStats(a) => (a, "partition-stats"),
    };
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.replicates {
        if r == 0 {
            return Err(Error::Usage("--replicates must be at least 1".into()));
        }
        match command {
            Command::Benchmark(_) => cfg.benchmark.replicates = r,
            Command::Diagnostics(_) => cfg.diagnostics.replicates = r,
            Command::PartitionStats(_) => cfg.partition_stats.replicates = r,
            Command::Optimize(_) => return Err(Error::Usage("optimize runs a single replicate".into())),
        }
    }
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let out = Output::new(&args.out, &cfg)?;
    let start = Instant::now();
    let status = with_jobs(args.jobs, || match command {
        Command::Optimize(_) => cmd_optimize(&cfg, &out),
        Command::Benchmark(_) => cmd_benchmark(&cfg, &out, exec),
        Command::Diagnostics(_) => cmd_diagnostics(&cfg, &out, exec),
        Command::PartitionStats(_) => cmd_partition_stats(&cfg, &out, exec),
    })?;
    out.timing(kind, start.elapsed().as_secs_f64(), None)?;
    Ok(status)
}

struct Output {
    dir: PathBuf,
    seed: u64,
    hash: String,
    resolved: String,
}

impl Output {
    fn new(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), seed: cfg.seed, hash: cfg.hash(), resolved: cfg.resolved_toml() })
    }

    fn csv_header(&self) -> String {
        let mut s = format!("# seed = {}\n# config_sha256 = {}\n", self.seed, self.hash);
        for line in self.resolved.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s
    }

    fn csv(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), format!("{}{body}", self.csv_header()))?;
        Ok(())
    }

    fn json(&self, name: &str, body: Value) -> Result<()> {
        let doc = json!({
            "seed": self.seed,
            "config_sha256": self.hash,
            "config": self.resolved,
            "noise_assumption": NOISE_ASSUMPTION,
            "data": body,
        });
        fs::write(self.dir.join(name), serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }

    fn timing(&self, command: &str, seconds: f64, extra: Option<Value>) -> Result<()> {
        let path = self.dir.join("timing.json");
        let mut doc = json!({ "command": command, "wall_seconds": seconds });
        if let Some(extra) = extra {
            doc["detail"] = extra;
        } else if let Ok(text) = fs::read_to_string(&path) {
            // keep a detail block written earlier by the same command
            if let Ok(prev) = serde_json::from_str::<Value>(&text) {
                if prev["command"] == command {
                    if let Some(d) = prev.get("detail") {
                        doc["detail"] = d.clone();
                    }
                }
            }
        }
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(())
    }
}

fn series_csv(result: &RunResult) -> String {
    let d = result.final_ensemble.dimension();
    let mut s = String::from("step");
    let rec = &result.record;
    if rec.best_objective {
        s.push_str(",best_objective");
    }
    if rec.displacement {
        s.push_str(",displacement");
    }
    if rec.diameters {
        for l in 1..=d {
            let _ = write!(s, ",diameter{l}");
        }
    }
    s.push('\n');
    for n in 0..=result.steps {
        let _ = write!(s, "{n}");
        if rec.best_objective {
            let _ = write!(s, ",{}", opt_f64(result.series.best_objective.get(n)));
        }
        if rec.displacement {
            // entry n is the move out of state n; the last state has none
            let _ = write!(s, ",{}", opt_f64(result.series.displacement.get(n)));
        }
        if rec.diameters {
            for l in 0..d {
                let _ = write!(s, ",{}", opt_f64(result.series.diameters.get(n).map(|v| &v[l])));
            }
        }
        s.push('\n');
    }
    s
}

fn opt_f64(v: Option<&f64>) -> String {
    v.map(|x| format_f64(*x)).unwrap_or_default()
}

fn termination_json(t: &Termination) -> Value {
    serde_json::to_value(t).expect("termination serializes")
}

fn run_summary(result: &RunResult) -> Value {
    json!({
        "termination": termination_json(&result.termination),
        "steps": result.steps,
        "evaluations": result.evaluations,
        "gamma": result.gamma,
        "best_index": result.best_index(),
        "best_point": result.best_point(),
        "best_value": result.best_value(),
    })
}

fn cmd_optimize(cfg: &ExperimentConfig, out: &Output) -> Result<i32> {
    let run_cfg = cfg.run_config()?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let result = run_detailed(&run_cfg, &run_cfg.objective, &mut rng)?;
    out.csv("final_ensemble.csv", &result.final_ensemble.to_csv())?;
    out.csv("series.csv", &series_csv(&result))?;
    out.json("summary.json", run_summary(&result))?;
    if let Termination::Diverged { step } = result.termination {
        eprintln!("error: {}", Error::Divergence { step });
        return Ok(1);
    }
    println!("steps {} best value {}", result.steps, format_f64(result.best_value()));
    Ok(0)
}

fn cmd_benchmark(cfg: &ExperimentConfig, out: &Output, exec: Execution) -> Result<i32> {
    let bench = cfg.benchmark_config()?;
    let table = benchmark(&bench, exec)?;
    out.csv("success_rates.csv", &table.success_csv())?;
    out.csv("mean_steps.csv", &table.steps_csv())?;
    out.json("benchmark.json", serde_json::to_value(&table)?)?;
    let cells: Vec<Value> = table
        .cells
        .iter()
        .map(|c| json!({ "dimension": c.dimension, "batch_size": c.batch_size, "mean_wall_seconds": c.mean_wall_seconds }))
        .collect();
    out.timing("benchmark", 0.0, Some(json!({ "cells": cells })))?;
    print!("{}", table.success_csv());
    Ok(0)
}

/// Window length: the configured one, else the exact covering length, else a
/// greedy upper bound when the exact search is out of reach.
fn resolve_window(given: Option<usize>, n: usize, p: usize) -> Result<(usize, &'static str)> {
    if let Some(m) = given {
        return Ok((m, "given"));
    }
    match find_m0(n, p) {
        Ok(m) => Ok((m, "exact")),
        Err(Error::Resource(_)) => Ok((m0_greedy_upper_bound(n, p)?, "greedy_upper_bound")),
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct PEstimate {
    value: f64,
    method: &'static str,
    std_error: Option<f64>,
    samples: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn resolve_p_m0(
    n: usize,
    p: usize,
    m0: usize,
    mode: EstimateMode,
    cap: usize,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<PEstimate> {
    let exact = || exact_p_m0(n, p, m0, cap).map(|v| PEstimate { value: v, method: "exact", std_error: None, samples: None });
    let mc = || {
        estimate_p_m0(n, p, m0, replicates, seed, exec).map(|e| PEstimate {
            value: e.mean,
            method: "monte_carlo",
            std_error: Some(e.std_error),
            samples: Some(e.samples),
        })
    };
    match mode {
        EstimateMode::Exact => exact(),
        EstimateMode::MonteCarlo => mc(),
        EstimateMode::Auto => match exact() {
            Err(Error::Resource(_)) => mc(),
            other => other,
        },
    }
}

fn cmd_partition_stats(cfg: &ExperimentConfig, out: &Output, exec: Execution) -> Result<i32> {
    let s = &cfg.partition_stats;
    let (m0, m0_method) = resolve_window(s.m0, s.particles, s.batch_size)?;
    let p = resolve_p_m0(s.particles, s.batch_size, m0, s.mode, s.exact_cap, s.replicates, cfg.seed, exec)?;
    let inputs = RateInputs { gamma: s.gamma, particles: s.particles, m0, p_m0: p.value, zeta: s.zeta };
    let rate = theoretical_rate(inputs)?;
    let critical = critical_zeta(inputs).ok();
    let data = json!({
        "particles": s.particles,
        "batch_size": s.batch_size,
        "m0": m0,
        "m0_method": m0_method,
        "p_m0": p,
        "rate": rate,
        "critical_zeta": critical,
    });
    out.json("partition_stats.json", data)?;
    println!(
        "m0 {m0} ({m0_method}) p_m0 {} ({}) lambda_1 {} condition {}",
        format_f64(p.value),
        p.method,
        format_f64(rate.lambda_1),
        if rate.positive { "holds" } else { "fails" }
    );
    Ok(0)
}

#[derive(Default, Serialize)]
struct CheckTally {
    check: &'static str,
    passed: usize,
    total: usize,
    worst_slack: f64,
}

fn tally(reports: &[BoundReport]) -> Vec<CheckTally> {
    let mut out: Vec<CheckTally> = Vec::new();
    for r in reports {
        let t = match out.iter_mut().position(|t| t.check == r.check) {
            Some(i) => &mut out[i],
            None => {
                out.push(CheckTally { check: r.check, worst_slack: f64::INFINITY, ..Default::default() });
                out.last_mut().expect("just pushed")
            }
        };
        t.total += 1;
        t.passed += r.pass as usize;
        t.worst_slack = t.worst_slack.min(r.slack);
    }
    out
}

fn diagnostics_run_config(cfg: &ExperimentConfig) -> Result<RunConfig> {
    let mut run_cfg = cfg.run_config()?;
    run_cfg.record.transitions = true;
    run_cfg.record.snapshots = true;
    run_cfg.record.diameters = true;
    run_cfg.record.best_objective = true;
    run_cfg.record.displacement = true;
    run_cfg.validate()?;
    Ok(run_cfg)
}

fn cmd_diagnostics(cfg: &ExperimentConfig, out: &Output, exec: Execution) -> Result<i32> {
    let dcfg = &cfg.diagnostics;
    let run_cfg = diagnostics_run_config(cfg)?;
    let (n, p, d) = (run_cfg.particles, run_cfg.batch_size, run_cfg.dimension);
    let (m, m_method) = resolve_window(dcfg.window, n, p)?;

    let primary = run_detailed(&run_cfg, &run_cfg.objective, &mut RngStream::new(cfg.seed, 0))?;
    if let Termination::Diverged { step } = primary.termination {
        out.csv("series.csv", &series_csv(&primary))?;
        out.json("diagnostics.json", json!({ "run": run_summary(&primary) }))?;
        eprintln!("error: {}", Error::Divergence { step });
        return Ok(1);
    }

    let mut reports = Vec::new();
    for l in 0..d {
        reports.extend(verify_trajectory(&primary, m, l)?);
    }
    let passed = reports.iter().filter(|r| r.pass).count();

    let windows = primary.series.transitions.len() / m;
    let noise_h: Vec<Vec<f64>> = (0..windows)
        .map(|k| (0..d).map(|l| noise_statistic_h(&primary.series.transitions[k * m..(k + 1) * m], l)).collect())
        .collect();

    let mut replicate_cfg = run_cfg.clone();
    replicate_cfg.record = crate::dynamics::RecordOptions { diameters: true, ..crate::dynamics::RecordOptions::minimal() };
    let extra = crate::exec::map_indexed(exec, dcfg.replicates.saturating_sub(1), |k| {
        run_detailed(&replicate_cfg, &replicate_cfg.objective, &mut RngStream::new(cfg.seed, k as u64 + 1))
    });
    let mut runs = vec![primary.clone()];
    for r in extra {
        let r = r?;
        if !r.diverged() {
            runs.push(r);
        }
    }

    let zeta = run_cfg.noise_model()?.law.zeta();
    let theory = match resolve_p_m0(n, p, m, EstimateMode::Auto, cfg.partition_stats.exact_cap, cfg.partition_stats.replicates, cfg.seed, exec) {
        Ok(pe) => Some(RateInputs { gamma: primary.gamma, particles: n, m0: m, p_m0: pe.value, zeta }),
        Err(Error::NoConnectivity { .. }) => None,
        Err(e) => return Err(e),
    };
    let passes = WindowPasses { passed, total: reports.len() };
    let decay = |mode| -> Value {
        match estimate_decay(&runs, dcfg.coordinate, mode, theory) {
            Ok(mut rep) => {
                rep.window_passes = Some(passes);
                serde_json::to_value(rep).expect("report serializes")
            }
            Err(e) => json!({ "error": e.to_string() }),
        }
    };
    let pathwise = match estimate_decay(std::slice::from_ref(&primary), dcfg.coordinate, DecayMode::Pathwise, theory) {
        Ok(mut rep) => {
            rep.window_passes = Some(passes);
            serde_json::to_value(rep)?
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let convergence = match convergence_check(&primary, dcfg.tail.min(primary.steps.max(1))) {
        Ok(c) => serde_json::to_value(c)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    let audit = match primary.rule {
        RepresentativeRule::Argmin => serde_json::to_value(monotonicity_audit(&primary)?)?,
        RepresentativeRule::Gibbs { .. } => Value::Null,
    };
    let suites: Vec<SuiteSummary> = if dcfg.suite_cases > 0 {
        MatrixProperty::ALL
            .iter()
            .map(|&prop| random_property_suite(prop, dcfg.suite_cases, dcfg.suite_max_n, cfg.seed, exec))
            .collect()
    } else {
        Vec::new()
    };
    let suite_ok = suites.iter().all(|s| s.violations == 0);

    out.json("bound_reports.json", serde_json::to_value(&reports)?)?;
    out.csv("series.csv", &series_csv(&primary))?;
    out.json(
        "diagnostics.json",
        json!({
            "run": run_summary(&primary),
            "window": m,
            "window_method": m_method,
            "windows": windows,
            "passed": passed,
            "total": reports.len(),
            "checks": tally(&reports),
            "noise_statistic": noise_h,
            "decay_pathwise": pathwise,
            "decay_expectation": decay(DecayMode::Expectation),
            "replicates_used": runs.len(),
            "convergence": convergence,
            "monotonicity": audit,
            "diameter_increase_frequency": diameter_increase_frequency(&primary)?,
            "matrix_suites": suites,
        }),
    )?;
    println!("bound checks passed {passed} of {} over {windows} windows of length {m}", reports.len());
    if !suites.is_empty() {
        let v: usize = suites.iter().map(|s| s.violations).sum();
        println!("matrix suites {} cases, {v} violations", suites.iter().map(|s| s.cases).sum::<usize>());
    }
    Ok(if passed == reports.len() && suite_ok { 0 } else { 1 })
}
