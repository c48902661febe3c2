//! Experiment configuration files.
//!
//! A config is a TOML document with one section per concern. Every key is
//! optional; omitted keys take the Rastrigin benchmark defaults
//! (`N = 100`, `γ = 0.01`, `ζ = 0.5`, argmin rule, start box `[−3, 3]^d`,
//! `ε = 10⁻³`, minimizer `(1, …, 1)`).
//!
//! ```toml
//! seed = 7
//!
//! [run]
//! particles = 100
//! dimension = 4
//! batch_size = 10
//!
//! [scheme]
//! kind = "generalized"
//! gamma = 0.01
//! zeta = 0.5
//!
//! [rule]
//! kind = "gibbs"
//! beta = 30.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::RepresentativeRule;
use crate::dynamics::{Heterogeneity, Initialization, RecordOptions, RunConfig, SchemeConfig};
use crate::error::{config, Error, Result};
use crate::harness::{BenchmarkConfig, ObjectiveFamily};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub particles: usize,
    pub dimension: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub tolerance: f64,
    pub heterogeneity: Heterogeneity,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { particles: 100, dimension: 2, batch_size: 100, max_steps: 100_000, tolerance: 1e-3, heterogeneity: Heterogeneity::Heterogeneous }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Rastrigin,
    Sphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub name: ObjectiveName,
    /// Every coordinate of the minimizer.
    pub minimizer: f64,
    /// Rastrigin only.
    pub offset: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { name: ObjectiveName::Rastrigin, minimizer: 1.0, offset: 0.0 }
    }
}

impl ObjectiveSection {
    pub fn family(&self) -> ObjectiveFamily {
        match self.name {
            ObjectiveName::Rastrigin => ObjectiveFamily::Rastrigin { minimizer: self.minimizer, offset: self.offset },
            ObjectiveName::Sphere => ObjectiveFamily::Sphere { minimizer: self.minimizer },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Argmin,
    Gibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleSection {
    pub kind: RuleKind,
    /// Gibbs only.
    pub beta: f64,
}

impl Default for RuleSection {
    fn default() -> Self {
        Self { kind: RuleKind::Argmin, beta: 30.0 }
    }
}

impl RuleSection {
    pub fn rule(&self) -> RepresentativeRule {
        match self.kind {
            RuleKind::Argmin => RepresentativeRule::Argmin,
            RuleKind::Gibbs => RepresentativeRule::Gibbs { beta: self.beta },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Generalized,
    ModelA,
    ModelB,
    ModelC,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    /// Generalized scheme.
    pub gamma: f64,
    pub zeta: f64,
    /// Discretized SDE schemes.
    pub lambda: f64,
    pub sigma: f64,
    pub h: f64,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self { kind: SchemeKind::Generalized, gamma: 0.01, zeta: 0.5, lambda: 1.0, sigma: 0.0, h: 0.01 }
    }
}

impl SchemeSection {
    pub fn scheme(&self) -> SchemeConfig {
        let (lambda, sigma, h) = (self.lambda, self.sigma, self.h);
        match self.kind {
            SchemeKind::Generalized => SchemeConfig::Generalized { gamma: self.gamma, zeta: self.zeta },
            SchemeKind::ModelA => SchemeConfig::ModelA { lambda, sigma, h },
            SchemeKind::ModelB => SchemeConfig::ModelB { lambda, sigma, h },
            SchemeKind::ModelC => SchemeConfig::ModelC { lambda, sigma, h },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    UniformBox,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub kind: InitKind,
    pub lower: f64,
    pub upper: f64,
    /// Explicit only: one row per particle.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<Vec<f64>>,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { kind: InitKind::UniformBox, lower: -3.0, upper: 3.0, states: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub dimensions: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub replicates: usize,
    pub threshold: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self { dimensions: (2..=10).collect(), batch_sizes: vec![100, 50, 10], replicates: 200, threshold: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Window length; the smallest covering length `m0` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Coordinate used for the decay fit.
    pub coordinate: usize,
    /// Runs averaged for the expectation-mode fit; the first one is instrumented.
    pub replicates: usize,
    /// Tail length of the convergence check.
    pub tail: usize,
    /// Random instances per matrix property; 0 skips the suites.
    pub suite_cases: usize,
    pub suite_max_n: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { window: None, coordinate: 0, replicates: 1, tail: 50, suite_cases: 10_000, suite_max_n: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Exact when the enumeration fits under `exact_cap`, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionStatsSection {
    pub particles: usize,
    pub batch_size: usize,
    /// Window length; computed when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<usize>,
    pub gamma: f64,
    pub zeta: f64,
    pub mode: EstimateMode,
    /// Largest number of partition sequences enumerated exactly.
    pub exact_cap: usize,
    pub replicates: usize,
}

impl Default for PartitionStatsSection {
    fn default() -> Self {
        Self {
            particles: 4,
            batch_size: 2,
            m0: None,
            gamma: 0.5,
            zeta: 0.0,
            mode: EstimateMode::Auto,
            exact_cap: 2_000_000,
            replicates: 100_000,
        }
    }
}

/// A fully resolved experiment config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run: RunSection,
    pub objective: ObjectiveSection,
    pub rule: RuleSection,
    pub scheme: SchemeSection,
    pub init: InitSection,
    pub record: RecordOptions,
    pub benchmark: BenchmarkSection,
    pub diagnostics: DiagnosticsSection,
    pub partition_stats: PartitionStatsSection,
}

impl ExperimentConfig {
    /// Parses and validates. Errors name the offending line when it can be found.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| line_of(text, s.start));
            let msg = e.message().trim().to_string();
            match at {
                Some(line) => config(format!("line {line}: {msg}")),
                None => config(msg),
            }
        })?;
        cfg.validate().map_err(|(section, key, msg)| match find_key(text, section, key) {
            Some(line) => config(format!("line {line}: [{section}] {key}: {msg}")),
            None => config(format!("[{section}] {key}: {msg}")),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let r = &self.run;
        let fail = |section, key, msg: String| Err((section, key, msg));
        if r.particles == 0 {
            return fail("run", "particles", "must be at least 1".into());
        }
        if r.dimension == 0 {
            return fail("run", "dimension", "must be at least 1".into());
        }
        if r.batch_size == 0 || r.batch_size > r.particles {
            return fail("run", "batch_size", format!("must lie in [1, {}]", r.particles));
        }
        if r.max_steps == 0 {
            return fail("run", "max_steps", "must be at least 1".into());
        }
        if !(r.tolerance > 0.0) {
            return fail("run", "tolerance", "must be positive".into());
        }
        if !self.objective.minimizer.is_finite() || !self.objective.offset.is_finite() {
            return fail("objective", "minimizer", "must be finite".into());
        }
        if let Err(e) = self.rule.rule().validate() {
            return fail("rule", "beta", strip(e));
        }
        if let Err(e) = crate::dynamics::step_params(&self.scheme.scheme()) {
            let key = match self.scheme.kind {
                SchemeKind::Generalized if !(self.scheme.zeta.is_finite() && self.scheme.zeta >= 0.0) => "zeta",
                SchemeKind::Generalized => "gamma",
                _ => "kind",
            };
            return fail("scheme", key, strip(e));
        }
        match self.init.kind {
            InitKind::UniformBox => {
                if !(self.init.lower.is_finite() && self.init.upper.is_finite() && self.init.lower < self.init.upper) {
                    return fail("init", "lower", "need finite lower < upper".into());
                }
            }
            InitKind::Explicit => {
                let s = &self.init.states;
                if s.len() != r.particles || s.iter().any(|row| row.len() != r.dimension) {
                    return fail("init", "states", format!("need {} rows of {} values", r.particles, r.dimension));
                }
            }
        }
        let b = &self.benchmark;
        if b.replicates == 0 {
            return fail("benchmark", "replicates", "must be at least 1".into());
        }
        if !(b.threshold > 0.0) {
            return fail("benchmark", "threshold", "must be positive".into());
        }
        if b.dimensions.is_empty() || b.dimensions.contains(&0) {
            return fail("benchmark", "dimensions", "need at least one positive dimension".into());
        }
        // batch sizes are checked against N when the grid is built
        if b.batch_sizes.is_empty() || b.batch_sizes.contains(&0) {
            return fail("benchmark", "batch_sizes", "need at least one positive batch size".into());
        }
        let d = &self.diagnostics;
        if d.window == Some(0) {
            return fail("diagnostics", "window", "must be at least 1".into());
        }
        if d.coordinate >= r.dimension {
            return fail("diagnostics", "coordinate", format!("must be below d = {}", r.dimension));
        }
        if d.replicates == 0 {
            return fail("diagnostics", "replicates", "must be at least 1".into());
        }
        if d.tail == 0 {
            return fail("diagnostics", "tail", "must be at least 1".into());
        }
        if d.suite_max_n == 0 {
            return fail("diagnostics", "suite_max_n", "must be at least 1".into());
        }
        let p = &self.partition_stats;
        if p.particles == 0 {
            return fail("partition_stats", "particles", "must be at least 1".into());
        }
        if p.batch_size == 0 || p.batch_size > p.particles {
            return fail("partition_stats", "batch_size", format!("must lie in [1, {}]", p.particles));
        }
        if p.m0 == Some(0) {
            return fail("partition_stats", "m0", "must be at least 1".into());
        }
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            return fail("partition_stats", "gamma", "must lie in (0, 1)".into());
        }
        if !(p.zeta.is_finite() && p.zeta >= 0.0) {
            return fail("partition_stats", "zeta", "must be finite and non-negative".into());
        }
        if p.replicates == 0 {
            return fail("partition_stats", "replicates", "must be at least 1".into());
        }
        Ok(())
    }

    /// The single-run config described by `[run]` and the model sections.
    pub fn run_config(&self) -> Result<RunConfig> {
        let init = match self.init.kind {
            InitKind::UniformBox => Initialization::UniformBox { lower: self.init.lower, upper: self.init.upper },
            InitKind::Explicit => Initialization::Explicit { states: self.init.states.clone() },
        };
        let cfg = RunConfig {
            particles: self.run.particles,
            dimension: self.run.dimension,
            objective: self.objective.family().build(self.run.dimension)?,
            rule: self.rule.rule(),
            scheme: self.scheme.scheme(),
            heterogeneity: self.run.heterogeneity,
            batch_size: self.run.batch_size,
            max_steps: self.run.max_steps,
            tolerance: self.run.tolerance,
            seed: self.seed,
            init,
            record: self.record,
        };
        Ok(cfg)
    }

    /// Grid over `[benchmark]`, every cell built from the run template.
    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let mut template = self.run_config()?;
        if matches!(template.init, Initialization::Explicit { .. }) {
            return Err(config("[init] explicit states cannot be used across benchmark dimensions"));
        }
        template.record = RecordOptions::minimal();
        if let Some(p) = self.benchmark.batch_sizes.iter().find(|&&p| p > self.run.particles) {
            return Err(config(format!("[benchmark] batch_sizes: {p} exceeds N = {}", self.run.particles)));
        }
        Ok(BenchmarkConfig {
            template,
            objective: self.objective.family(),
            dimensions: self.benchmark.dimensions.clone(),
            batch_sizes: self.benchmark.batch_sizes.clone(),
            replicates: self.benchmark.replicates,
            threshold: self.benchmark.threshold,
            seed: self.seed,
        })
    }

    /// Canonical TOML of every resolved value.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::resolved_toml`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.resolved_toml().as_bytes()))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key = …` inside `[section]`.
fn find_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
