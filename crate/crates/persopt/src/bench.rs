//! Experiment harness: configuration, the strategy-comparison runner, and
//! file emission.
//!
//! One experiment pits sequential strategies (the two acquisition loops plus
//! a Sobol'-sequence baseline) against the constant robust decisions on one
//! benchmark function. All strategies within a replicate share the same
//! initial design and cost grid; after every added run the estimated profile
//! is re-tabulated and its true expected/maximum costs are recorded.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::SobolStream;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::report::{trace_to_csv, CostReport, CostRow, RunMetadata, TraceRow};
use crate::robust::{self, Density, PersonalizedDecision, QuadratureSpec};
use crate::sha::{self, NestedBudget, ShaConfig, ShaState, ShaVariant, StoppingMode};
use crate::testbed::{BlackBox, TestFunction};

/// Sequential design strategies the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Sha1,
    Sha2,
    Sobol,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Sha1 => "sha1",
            StrategyKind::Sha2 => "sha2",
            StrategyKind::Sobol => "sobol",
        }
    }
}

/// One strategy entry of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Nominal level for the confidence bound; defaults to 0.5. Ignored by
    /// the Sobol' baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl StrategySpec {
    fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.5)
    }

    fn label(&self) -> String {
        match self.kind {
            StrategyKind::Sobol => "sobol".to_string(),
            kind => format!("{}_a{}", kind.as_str(), crate::report::fmt_g(self.alpha(), 12)),
        }
    }
}

/// Cost-grid settings (midpoint tensor rule up to two environmental dims,
/// seeded Monte Carlo above).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostGridConfig {
    #[serde(default = "default_points_per_dim")]
    pub points_per_dim: usize,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
}

fn default_points_per_dim() -> usize {
    101
}

fn default_mc_draws() -> usize {
    4096
}

impl Default for CostGridConfig {
    fn default() -> Self {
        Self {
            points_per_dim: default_points_per_dim(),
            mc_draws: default_mc_draws(),
        }
    }
}

fn default_iterations() -> usize {
    30
}

fn default_replicates() -> usize {
    1
}

/// A full experiment configuration. Unknown JSON keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registry id of the benchmark function (`"f1"`..`"f6"`, `"sq"`).
    pub function: String,
    pub strategies: Vec<StrategySpec>,
    /// Initial design size.
    pub n0: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cost_grid: CostGridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates a JSON config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let f = TestFunction::by_id(&self.function)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(Error::Config("strategy list is empty".into()));
        }
        for s in &self.strategies {
            if let Some(a) = s.alpha
                && !(a > 0.0 && a < 1.0) {
                    return Err(Error::Config(format!("alpha must be in (0, 1), got {a}")));
                }
        }
        let d = f.domain().dim();
        if self.n0 < d + 2 {
            return Err(Error::Config(format!(
                "n0 must be at least d + 2 = {} for {}, got {}",
                d + 2,
                self.function,
                self.n0
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.cost_grid.points_per_dim == 0 || self.cost_grid.mc_draws == 0 {
            return Err(Error::Config("cost grid sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A finished experiment: the cost table plus per-strategy point traces
/// (replicate 0).
pub struct ExperimentOutput {
    pub report: CostReport,
    pub traces: Vec<StrategyTrace>,
}

pub struct StrategyTrace {
    pub label: String,
    pub p: usize,
    pub q: usize,
    pub rows: Vec<TraceRow>,
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// True expected/maximum costs of the model's estimated profile, tabulated
/// on the shared cost grid.
fn pos_costs(
    model: &GpModel,
    f: &TestFunction,
    nodes: &[Vec<f64>],
    quad: &QuadratureSpec,
    budget: &NestedBudget,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(nodes.len());
    for t in nodes {
        let (s, _) = sha::estimate_pos(
            model,
            t,
            budget.scan_candidates_per_dim,
            budget.scan_polish_iters,
            seed,
        )?;
        values.push(s);
    }
    let decision = PersonalizedDecision::Tabulated {
        grid: nodes.to_vec(),
        values,
    };
    let ce = robust::expected_cost(&decision, f, &Density::Uniform, quad)?;
    let cm = robust::max_cost(&decision, f, quad)?;
    Ok((ce, cm))
}

struct JobResult {
    rows: Vec<CostRow>,
    trace: Option<StrategyTrace>,
    failure: Option<String>,
}

/// Shared read-only context for every job of one experiment.
struct JobContext<'a> {
    config: &'a ExperimentConfig,
    f: &'a TestFunction,
    nodes: &'a [Vec<f64>],
    quad: &'a QuadratureSpec,
    compute_costs: bool,
}

fn run_job(
    ctx: &JobContext<'_>,
    strategy: &StrategySpec,
    strategy_index: usize,
    replicate: usize,
) -> JobResult {
    let JobContext {
        config,
        f,
        nodes,
        quad,
        compute_costs,
    } = *ctx;
    let seed = mix(config.seed, (strategy_index as u64) << 32 | replicate as u64);
    let budget = NestedBudget::default();
    let label = strategy.label();
    let p = f.domain().p();
    let q = f.domain().q();
    let mut rows = Vec::with_capacity(config.iterations);
    let mut trace_rows = Vec::new();

    let result = (|| -> Result<()> {
        match strategy.kind {
            StrategyKind::Sha1 | StrategyKind::Sha2 => {
                let variant = if strategy.kind == StrategyKind::Sha1 {
                    ShaVariant::Sha1
                } else {
                    ShaVariant::Sha2
                };
                let mut sha_config = ShaConfig::new(
                    variant,
                    config.n0,
                    strategy.alpha(),
                    config.n0 + config.iterations,
                );
                sha_config.stopping = StoppingMode::BudgetOnly;
                sha_config.seed = seed;
                let mut state = ShaState::initialize(f, &sha_config)?;
                for iteration in 1..=config.iterations {
                    sha::step(&mut state, f, &sha_config)?;
                    if !compute_costs {
                        continue;
                    }
                    let (ce, cm) =
                        pos_costs(state.model(), f, nodes, quad, &budget, mix(seed, 0xCE))?;
                    rows.push(CostRow {
                        function: config.function.clone(),
                        strategy: strategy.kind.as_str().to_string(),
                        alpha: Some(strategy.alpha()),
                        replicate: replicate as u32,
                        iteration: iteration as u32,
                        n: state.data().n() as u32,
                        ce,
                        cm,
                    });
                }
                if replicate == 0 {
                    trace_rows = state
                        .history()
                        .iter()
                        .map(|r| TraceRow {
                            iteration: r.iteration as u32,
                            s: r.acquisition.s_next.clone(),
                            t: r.acquisition.t_next.clone(),
                            lcb: r.acquisition.lcb,
                            sd: r.acquisition.sd,
                        })
                        .collect();
                }
            }
            StrategyKind::Sobol => {
                // Same initial design; each added run is the next point of
                // the joint Sobol' stream, and the model is refit exactly as
                // the sequential loops do.
                let mut data = sha::initial_design(f, config.n0)?;
                let mut stream = SobolStream::new(f.domain().dim())?;
                for _ in 0..config.n0 {
                    stream.next_point();
                }
                let mut fit = crate::gp::FitConfig {
                    seed: mix(seed, 0xF0),
                    ..crate::gp::FitConfig::default()
                };
                let mut model = GpModel::fit(&data, &fit)?;
                let joint = f.domain().joint();
                for iteration in 1..=config.iterations {
                    let x = stream.next_in(&joint);
                    let (s, t) = f.domain().split(&x);
                    let y = f.eval(s, t)?;
                    if replicate == 0 {
                        let pred = model.predict(&x, strategy.alpha())?;
                        trace_rows.push(TraceRow {
                            iteration: iteration as u32,
                            s: s.to_vec(),
                            t: t.to_vec(),
                            lcb: pred.lower,
                            sd: pred.sd,
                        });
                    }
                    data.push(x.clone(), y)?;
                    fit.seed = mix(seed, iteration as u64);
                    fit.warm_start = Some(model.theta().values().to_vec());
                    model = GpModel::fit(&data, &fit)?;
                    if !compute_costs {
                        continue;
                    }
                    let (ce, cm) = pos_costs(&model, f, nodes, quad, &budget, mix(seed, 0xCE))?;
                    rows.push(CostRow {
                        function: config.function.clone(),
                        strategy: strategy.kind.as_str().to_string(),
                        alpha: None,
                        replicate: replicate as u32,
                        iteration: iteration as u32,
                        n: data.n() as u32,
                        ce,
                        cm,
                    });
                }
            }
        }
        Ok(())
    })();

    let trace = (replicate == 0).then(|| StrategyTrace {
        label: label.clone(),
        p,
        q,
        rows: trace_rows,
    });
    match result {
        Ok(()) => JobResult {
            rows,
            trace,
            failure: None,
        },
        Err(e) => JobResult {
            rows: Vec::new(),
            trace: None,
            failure: Some(format!("{label} replicate {replicate}: {e}")),
        },
    }
}

/// Runs every strategy and replicate, computes the constant-baseline rows
/// once, and assembles the report. A failing replicate is recorded as a
/// diagnostic and does not abort the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let started = Instant::now();
    let f = Arc::new(TestFunction::by_id(&config.function)?);
    let quad = QuadratureSpec {
        points_per_dim: config.cost_grid.points_per_dim,
        mc_draws: config.cost_grid.mc_draws,
        seed: mix(config.seed, 0x9D),
    };
    let (nodes, _) = quad.nodes(f.domain().env());

    // Accurate constant baselines from the true cost function.
    let (ue, _) = robust::solve_u_e(f.as_ref(), &Density::Uniform, &quad, mix(config.seed, 0xE0))?;
    let (um, _) = robust::solve_u_m(f.as_ref(), &quad, mix(config.seed, 0xE1))?;
    let u_e = PersonalizedDecision::Constant(ue);
    let u_m = PersonalizedDecision::Constant(um);
    let mut baseline_rows = Vec::new();
    for (name, u) in [("u_e", &u_e), ("u_m", &u_m)] {
        baseline_rows.push(CostRow {
            function: config.function.clone(),
            strategy: name.to_string(),
            alpha: None,
            replicate: 0,
            iteration: 0,
            n: 0,
            ce: robust::expected_cost(u, f.as_ref(), &Density::Uniform, &quad)?,
            cm: robust::max_cost(u, f.as_ref(), &quad)?,
        });
    }

    let ctx = JobContext {
        config,
        f: &f,
        nodes: &nodes,
        quad: &quad,
        compute_costs: true,
    };
    let jobs: Vec<(usize, usize)> = (0..config.strategies.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let mut results: Vec<(usize, JobResult)> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(s, r))| {
            (
                idx,
                run_job(&ctx, &config.strategies[s], s, r),
            )
        })
        .collect();
    results.sort_by_key(|(idx, _)| *idx);

    let mut rows = baseline_rows;
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (_, job) in results {
        rows.extend(job.rows);
        if let Some(trace) = job.trace {
            traces.push(trace);
        }
        if let Some(f) = job.failure {
            failures.push(f);
        }
    }

    let report = CostReport {
        rows,
        metadata: RunMetadata {
            function: config.function.clone(),
            seed: config.seed,
            replicates: config.replicates,
            iterations: config.iterations,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    if !failures.is_empty() {
        // Failures are part of the metadata sidecar via emit(); surface them
        // on the report too.
        return Ok(ExperimentOutput {
            report: CostReport {
                metadata: RunMetadata {
                    function: format!(
                        "{} ({} failed jobs: {})",
                        report.metadata.function,
                        failures.len(),
                        failures.join("; ")
                    ),
                    ..report.metadata
                },
                ..report
            },
            traces,
        });
    }
    Ok(ExperimentOutput { report, traces })
}

/// Runs replicate 0 of every strategy without cost evaluation and returns
/// the acquisition traces only.
pub fn run_traces(config: &ExperimentConfig) -> Result<Vec<StrategyTrace>> {
    config.validate()?;
    let f = TestFunction::by_id(&config.function)?;
    let quad = QuadratureSpec {
        points_per_dim: config.cost_grid.points_per_dim,
        mc_draws: config.cost_grid.mc_draws,
        seed: mix(config.seed, 0x9D),
    };
    let ctx = JobContext {
        config,
        f: &f,
        nodes: &[],
        quad: &quad,
        compute_costs: false,
    };
    let mut traces = Vec::new();
    for (s, strategy) in config.strategies.iter().enumerate() {
        let job = run_job(&ctx, strategy, s, 0);
        if let Some(failure) = job.failure {
            return Err(Error::Config(failure));
        }
        if let Some(trace) = job.trace {
            traces.push(trace);
        }
    }
    Ok(traces)
}

/// Output format of [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// Writes the cost table, the metadata sidecar, and one point-trace CSV per
/// strategy. Returns the created paths.
pub fn emit(output: &ExperimentOutput, out_dir: &Path, format: EmitFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let function = &output.report.metadata.function;
    let mut paths = Vec::new();

    let costs_path = match format {
        EmitFormat::Csv => {
            let p = out_dir.join(format!("{function}_costs.csv"));
            std::fs::write(&p, output.report.to_csv())?;
            p
        }
        EmitFormat::Json => {
            let p = out_dir.join(format!("{function}_costs.json"));
            std::fs::write(&p, output.report.to_json())?;
            p
        }
    };
    paths.push(costs_path);

    let meta_path = out_dir.join(format!("{function}_metadata.json"));
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&output.report.metadata).expect("metadata serializes"),
    )?;
    paths.push(meta_path);

    for trace in &output.traces {
        let p = out_dir.join(format!("{function}_trace_{}.csv", trace.label));
        std::fs::write(&p, trace_to_csv(&trace.rows, trace.p, trace.q))?;
        paths.push(p);
    }
    Ok(paths)
}
