//! Sequential design loops that concentrate runs near the profile optimal
//! surface.
//!
//! Both variants alternate: pick the next environment `t`, pick the control
//! as the minimizer of the lower confidence bound on that profile, evaluate
//! the black box there, refit the surrogate. Variant 1 picks `t` model-free
//! by maximizing the distance to the environments already visited; variant 2
//! picks the `t` whose bound-minimizing control carries the largest
//! predictive uncertainty. The nominal level `alpha` trades global
//! exploration (small `alpha`, uncertainty-heavy bound) against local
//! refinement.

use crate::design;
use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::gp::{FitConfig, GpModel};
use crate::opt::{self, SearchSpec};
use crate::testbed::BlackBox;

/// Which rule selects the next environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShaVariant {
    /// Maximin distance over visited environments (model-free).
    Sha1,
    /// Maximal predictive uncertainty along the estimated profile.
    Sha2,
}

impl ShaVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShaVariant::Sha1 => "sha1",
            ShaVariant::Sha2 => "sha2",
        }
    }
}

/// How the loop decides it is done (the evaluation budget always applies).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StoppingMode {
    /// Quadrature of the relative profile change and of the profile
    /// uncertainty against the thresholds.
    Integral,
    /// Maxima of the same two statistics over the grid.
    Maximum,
    /// Run until the budget alone.
    #[default]
    BudgetOnly,
}

/// Candidate and polish budgets for the nested searches.
#[derive(Debug, Clone)]
pub struct NestedBudget {
    /// Candidates per control dim for the final profile solves.
    pub profile_candidates_per_dim: usize,
    pub profile_polish_iters: usize,
    /// Reduced inner budget used inside variant 2's environment search and
    /// the stopping-grid tabulation, where thousands of profile solves run.
    pub scan_candidates_per_dim: usize,
    pub scan_polish_iters: usize,
    /// Outer candidates per environmental dim in variant 2's search.
    pub t_candidates_per_dim: usize,
    pub t_polish_iters: usize,
}

impl Default for NestedBudget {
    fn default() -> Self {
        Self {
            profile_candidates_per_dim: 128,
            profile_polish_iters: 200,
            scan_candidates_per_dim: 32,
            scan_polish_iters: 60,
            t_candidates_per_dim: 64,
            t_polish_iters: 60,
        }
    }
}

/// Full configuration of one sequential run.
#[derive(Debug, Clone)]
pub struct ShaConfig {
    pub variant: ShaVariant,
    /// Initial design size (first `n0` Sobol' points of the joint box).
    pub n0: usize,
    /// Nominal level of the confidence bound, in (0, 1).
    pub alpha: f64,
    /// Maximum total evaluations including the initial design.
    pub budget: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub stopping: StoppingMode,
    /// Stopping-grid size; 0 means the default `128 * q`.
    pub t_grid_size: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub nested: NestedBudget,
}

impl ShaConfig {
    pub fn new(variant: ShaVariant, n0: usize, alpha: f64, budget: usize) -> Self {
        Self {
            variant,
            n0,
            alpha,
            budget,
            eps1: 1e-3,
            eps2: 1e-3,
            stopping: StoppingMode::default(),
            t_grid_size: 0,
            seed: 0,
            fit: FitConfig::default(),
            nested: NestedBudget::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.n0 < d + 2 {
            return Err(Error::Config(format!(
                "n0 must be at least d + 2 = {}, got {}",
                d + 2,
                self.n0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.budget < self.n0 {
            return Err(Error::Config(format!(
                "budget {} below initial design size {}",
                self.budget, self.n0
            )));
        }
        Ok(())
    }
}

/// The selected next run with its acquisition diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub t_next: Vec<f64>,
    pub s_next: Vec<f64>,
    /// Lower confidence bound at the selected point.
    pub lcb: f64,
    /// Predictive standard deviation at the selected point.
    pub sd: f64,
    /// The selection criterion's value: the maximin distance (variant 1) or
    /// the profile uncertainty (variant 2).
    pub criterion: f64,
}

/// Stopping-rule statistics computed on the frozen environmental grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopDiagnostics {
    /// Relative change of the estimated profile cost between consecutive
    /// fits (integrated or maximal, per the mode).
    pub change_stat: f64,
    /// Profile predictive uncertainty (integrated or maximal).
    pub sd_stat: f64,
    pub satisfied: bool,
}

/// One completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration counter.
    pub iteration: usize,
    pub acquisition: AcquisitionResult,
    /// Observed response at the selected point.
    pub y: f64,
    /// Run count after this iteration.
    pub n: usize,
    pub stop: Option<StopDiagnostics>,
}

/// Estimated profile tabulated on the frozen stopping grid.
#[derive(Debug, Clone)]
struct PosTabulation {
    f_hat: Vec<f64>,
    sd: Vec<f64>,
}

/// Mutable state of a sequential run.
pub struct ShaState {
    data: Dataset,
    model: GpModel,
    iteration: usize,
    history: Vec<IterationRecord>,
    stop_grid: Vec<Vec<f64>>,
    pos_tab: Option<PosTabulation>,
    prev_pos_tab: Option<PosTabulation>,
}

impl ShaState {
    /// Evaluates the initial design, fits the first model, and freezes the
    /// stopping grid. The loop is then advanced with [`step`].
    pub fn initialize(f: &dyn BlackBox, config: &ShaConfig) -> Result<Self> {
        let domain = f.domain();
        config.validate(domain.dim())?;

        let data = initial_design(f, config.n0)?;
        let mut fit = config.fit.clone();
        fit.seed = mix(config.seed, 0xF0);
        let model = GpModel::fit(&data, &fit)?;

        let grid_size = if config.t_grid_size == 0 {
            128 * domain.q()
        } else {
            config.t_grid_size
        };
        let stop_grid = if config.stopping == StoppingMode::BudgetOnly {
            Vec::new()
        } else {
            opt::candidate_set(domain.env(), grid_size, mix(config.seed, 0x60))
        };

        let mut state = Self {
            data,
            model,
            iteration: 0,
            history: Vec::new(),
            stop_grid,
            pos_tab: None,
            prev_pos_tab: None,
        };
        if config.stopping != StoppingMode::BudgetOnly {
            state.pos_tab = Some(tabulate_pos(
                &state.model,
                &state.stop_grid,
                &config.nested,
                mix(config.seed, 0x61),
            )?);
        }
        Ok(state)
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    /// Completed iterations (runs added beyond the initial design).
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }
}

/// A finished (or aborted) run: final state, full trace, and the error that
/// cut it short, if any.
pub struct ShaRun {
    pub state: ShaState,
    pub aborted: Option<String>,
}

/// splitmix64 finalizer for deriving per-stage RNG seeds.
fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn profile_spec(model: &GpModel, candidates_per_dim: usize, polish_iters: usize, seed: u64) -> SearchSpec {
    let control = model.data().domain().control().clone();
    let p = control.dim();
    SearchSpec::new(control)
        .with_candidates(candidates_per_dim * p)
        .with_polish(4, polish_iters)
        .with_seed(seed)
}

/// Minimizes the lower confidence bound over the control box at fixed `t`:
/// the control the loop would commit to for that environment.
pub fn profile_lcb_min(
    model: &GpModel,
    t: &[f64],
    alpha: f64,
    candidates_per_dim: usize,
    polish_iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let domain = model.data().domain();
    if t.len() != domain.q() {
        return Err(Error::DimensionMismatch {
            expected: domain.q(),
            got: t.len(),
        });
    }
    let spec = profile_spec(model, candidates_per_dim, polish_iters, seed);
    opt::minimize(
        |s| {
            let x = domain.join(s, t);
            model
                .predict(&x, alpha)
                .map(|p| p.lower)
                .unwrap_or(f64::INFINITY)
        },
        &spec,
    )
}

/// Estimated profile optimum: argmin of the predictive mean at fixed `t`,
/// i.e. the confidence-bound minimizer at `alpha = 1`.
pub fn estimate_pos(
    model: &GpModel,
    t: &[f64],
    candidates_per_dim: usize,
    polish_iters: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    profile_lcb_min(model, t, 1.0, candidates_per_dim, polish_iters, seed)
}

/// Variant 1 environment selection: the point of the environmental box
/// farthest from every visited environment. Depends on the visited
/// environments only, never on responses.
pub fn select_t_sha1(state: &ShaState) -> Result<Vec<f64>> {
    design::maximin_next(&state.data.env_points(), state.data.domain().env())
}

fn select_t_sha1_ranked(state: &ShaState) -> Result<Vec<(Vec<f64>, f64)>> {
    design::maximin_ranked(&state.data.env_points(), state.data.domain().env())
}

/// Variant 2 environment selection: maximizes the predictive uncertainty at
/// the bound-minimizing control, solving one inner profile problem per
/// candidate environment.
pub fn select_t_sha2(state: &ShaState, alpha: f64) -> Result<Vec<f64>> {
    let ranked = select_t_sha2_ranked(
        &state.model,
        alpha,
        &NestedBudget::default(),
        mix(0, state.iteration as u64),
    )?;
    Ok(ranked.into_iter().next().expect("nonempty candidates").0)
}

fn profile_sd(
    model: &GpModel,
    t: &[f64],
    alpha: f64,
    budget: &NestedBudget,
    seed: u64,
) -> Result<f64> {
    let (s, _) = profile_lcb_min(
        model,
        t,
        alpha,
        budget.scan_candidates_per_dim,
        budget.scan_polish_iters,
        seed,
    )?;
    let x = model.data().domain().join(&s, t);
    Ok(model.predict(&x, alpha)?.sd)
}

fn select_t_sha2_ranked(
    model: &GpModel,
    alpha: f64,
    budget: &NestedBudget,
    seed: u64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let env = model.data().domain().env().clone();
    let q = env.dim();
    let candidates = opt::candidate_set(&env, budget.t_candidates_per_dim * q, mix(seed, 0xC0));
    let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(candidates.len());
    for t in candidates {
        let sd = profile_sd(model, &t, alpha, budget, mix(seed, 0xC1))?;
        scored.push((t, sd));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    // Polish the two leading candidates on the composite objective.
    let objective = |t: &[f64]| {
        -profile_sd(model, t, alpha, budget, mix(seed, 0xC1)).unwrap_or(f64::NEG_INFINITY)
    };
    let mut winner: Option<(Vec<f64>, f64)> = None;
    for (start, _) in scored.iter().take(2) {
        let (t, neg) = opt::nelder_mead(&objective, start, &env, budget.t_polish_iters, 1e-5, 0.0);
        let val = -neg;
        if winner.as_ref().is_none_or(|(_, w)| val > *w) {
            winner = Some((t, val));
        }
    }
    if let Some((t, val)) = winner
        && val >= scored[0].1 {
            scored.insert(0, (t, val));
        }
    Ok(scored)
}

/// Runs one iteration: select the next environment per the variant, commit
/// the bound-minimizing control, evaluate the black box once, append the
/// run, refit. On a duplicate collision the next-best environment candidate
/// is tried instead.
pub fn step(state: &mut ShaState, f: &dyn BlackBox, config: &ShaConfig) -> Result<()> {
    let iteration = state.iteration + 1;
    let seed = mix(config.seed, iteration as u64);
    let ranked = match config.variant {
        ShaVariant::Sha1 => select_t_sha1_ranked(state)?,
        ShaVariant::Sha2 => {
            select_t_sha2_ranked(&state.model, config.alpha, &config.nested, seed)?
        }
    };

    let domain = state.data.domain().clone();
    let mut accepted: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
    for (t, criterion) in ranked.iter().take(64) {
        let (s, lcb) = profile_lcb_min(
            &state.model,
            t,
            config.alpha,
            config.nested.profile_candidates_per_dim,
            config.nested.profile_polish_iters,
            mix(seed, 0x51),
        )?;
        let x = domain.join(&s, t);
        if !state.data.would_duplicate(&x) {
            accepted = Some((s, t.clone(), lcb, *criterion));
            break;
        }
    }
    let (s_next, t_next, lcb, criterion) = accepted.ok_or(Error::DuplicatePoint)?;

    let x = domain.join(&s_next, &t_next);
    let sd = state.model.predict(&x, config.alpha)?.sd;
    let criterion = match config.variant {
        ShaVariant::Sha1 => criterion,
        // Report the uncertainty achieved at the committed control.
        ShaVariant::Sha2 => sd,
    };
    let y = f.eval(&s_next, &t_next)?;
    state.data.push(x, y)?;

    let mut fit = config.fit.clone();
    fit.seed = mix(seed, 0xF1);
    fit.warm_start = Some(state.model.theta().values().to_vec());
    state.model = GpModel::fit(&state.data, &fit)?;
    state.iteration = iteration;
    state.history.push(IterationRecord {
        iteration,
        acquisition: AcquisitionResult {
            t_next,
            s_next,
            lcb,
            sd,
            criterion,
        },
        y,
        n: state.data.n(),
        stop: None,
    });
    Ok(())
}

fn tabulate_pos(
    model: &GpModel,
    grid: &[Vec<f64>],
    budget: &NestedBudget,
    seed: u64,
) -> Result<PosTabulation> {
    let domain = model.data().domain();
    let mut f_hat = Vec::with_capacity(grid.len());
    let mut sd = Vec::with_capacity(grid.len());
    for t in grid {
        let (s, _) = estimate_pos(
            model,
            t,
            budget.scan_candidates_per_dim,
            budget.scan_polish_iters,
            seed,
        )?;
        let p = model.predict(&domain.join(&s, t), 1.0)?;
        f_hat.push(p.mean);
        sd.push(p.sd);
    }
    Ok(PosTabulation { f_hat, sd })
}

/// Evaluates the active stopping rule on the frozen grid. Only applies from
/// the second completed iteration; the budget rule lives in [`run`]'s loop.
pub fn check_stop(state: &ShaState, config: &ShaConfig) -> Option<StopDiagnostics> {
    if config.stopping == StoppingMode::BudgetOnly || state.iteration < 2 {
        return None;
    }
    let (prev, cur) = match (&state.prev_pos_tab, &state.pos_tab) {
        (Some(p), Some(c)) => (p, c),
        _ => return None,
    };
    let floor = 1e-8 * state.data.response_scale();
    let ratios = prev
        .f_hat
        .iter()
        .zip(&cur.f_hat)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor));
    let (change_stat, sd_stat) = match config.stopping {
        StoppingMode::Integral => {
            let n = cur.f_hat.len() as f64;
            (
                ratios.sum::<f64>() / n,
                cur.sd.iter().sum::<f64>() / n,
            )
        }
        StoppingMode::Maximum => (
            ratios.fold(0.0_f64, f64::max),
            cur.sd.iter().fold(0.0_f64, |a, &b| a.max(b)),
        ),
        StoppingMode::BudgetOnly => unreachable!(),
    };
    Some(StopDiagnostics {
        change_stat,
        sd_stat,
        satisfied: change_stat < config.eps1 && sd_stat < config.eps2,
    })
}

/// The initial design: the first `n0` Sobol' points of the joint box.
pub fn initial_design(f: &dyn BlackBox, n0: usize) -> Result<Dataset> {
    let domain = f.domain();
    let joint = domain.joint();
    let mut stream = design::SobolStream::new(domain.dim())?;
    let mut points = Vec::with_capacity(n0);
    let mut responses = Vec::with_capacity(n0);
    for _ in 0..n0 {
        let x = stream.next_in(&joint);
        let (s, t) = domain.split(&x);
        responses.push(f.eval(s, t)?);
        points.push(x);
    }
    Dataset::new(domain.clone(), points, responses)
}

/// Runs the full sequential loop until a stopping rule or the budget is hit.
/// Errors during iterations abort the loop but return the partial trace with
/// the error recorded; errors before the first fit are returned directly.
pub fn run(f: &dyn BlackBox, config: &ShaConfig) -> Result<ShaRun> {
    let mut state = ShaState::initialize(f, config)?;
    let mut aborted = None;
    while state.data.n() < config.budget {
        if state
            .history
            .last()
            .and_then(|r| r.stop)
            .is_some_and(|s| s.satisfied)
        {
            break;
        }
        if let Err(e) = step(&mut state, f, config) {
            aborted = Some(e.to_string());
            break;
        }
        if config.stopping != StoppingMode::BudgetOnly {
            match tabulate_pos(
                &state.model,
                &state.stop_grid,
                &config.nested,
                mix(config.seed, 0x61),
            ) {
                Ok(tab) => {
                    state.prev_pos_tab = state.pos_tab.take();
                    state.pos_tab = Some(tab);
                    let diag = check_stop(&state, config);
                    if let Some(rec) = state.history.last_mut() {
                        rec.stop = diag;
                    }
                }
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            }
        }
    }
    Ok(ShaRun { state, aborted })
}
