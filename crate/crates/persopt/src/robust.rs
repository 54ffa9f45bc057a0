//! Robust-optimization baselines and decision-quality functionals.
//!
//! A personalized decision maps each environment `t` to a control `s`. Its
//! quality is summarized by the expected cost (the integral of `f(u(t), t)`
//! against an environmental density) and the maximum cost (the worst case
//! over the environmental box). The classical robust solutions are the
//! constant decisions minimizing each functional; the profile optimal
//! surface dominates both pointwise.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::Bounds;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::opt::{self, SearchSpec};
use crate::testbed::BlackBox;

/// Declared absolute/relative accuracy of the cost functionals under the
/// default quadrature settings.
pub const COST_TOL: f64 = 1e-3;

/// A pointwise density over the environmental box.
pub type DensityFn = Box<dyn Fn(&[f64]) -> f64 + Sync + Send>;

/// An exact environment-to-control mapping.
pub type DecisionFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + Send>;

/// Environmental density for the expected-cost integral.
pub enum Density {
    /// Uniform over the environmental box (the default).
    Uniform,
    /// An arbitrary density evaluated pointwise.
    Custom(DensityFn),
}

impl Density {
    fn weight(&self, t: &[f64], env: &Bounds) -> f64 {
        match self {
            Density::Uniform => 1.0 / env.volume(),
            Density::Custom(phi) => phi(t),
        }
    }
}

/// Evaluation grid for the cost functionals: a midpoint tensor rule for
/// `q <= 2`, seeded Monte Carlo above.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub points_per_dim: usize,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            points_per_dim: 101,
            mc_draws: 4096,
            seed: 0,
        }
    }
}

impl QuadratureSpec {
    /// Grid nodes over the environmental box and the cell volume attached to
    /// each node.
    pub fn nodes(&self, env: &Bounds) -> (Vec<Vec<f64>>, f64) {
        let q = env.dim();
        if q <= 2 {
            let k = self.points_per_dim.max(1);
            let mut nodes = Vec::with_capacity(k.pow(q as u32));
            let mut idx = vec![0usize; q];
            loop {
                let node: Vec<f64> = (0..q)
                    .map(|j| env.lower()[j] + (idx[j] as f64 + 0.5) / k as f64 * env.width(j))
                    .collect();
                nodes.push(node);
                let mut j = 0;
                loop {
                    if j == q {
                        return finish(nodes, env.volume() / (k.pow(q as u32) as f64));
                    }
                    idx[j] += 1;
                    if idx[j] < k {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let n = self.mc_draws.max(1);
            let nodes = (0..n)
                .map(|_| {
                    (0..q)
                        .map(|j| {
                            env.lower()[j] + rng.random_range(0.0..1.0) * env.width(j)
                        })
                        .collect()
                })
                .collect();
            return finish(nodes, env.volume() / n as f64);
        }

        fn finish(nodes: Vec<Vec<f64>>, cell: f64) -> (Vec<Vec<f64>>, f64) {
            (nodes, cell)
        }
    }
}

/// A mapping from the environmental box to the control box.
pub enum PersonalizedDecision {
    /// The same control for every environment.
    Constant(Vec<f64>),
    /// Argmin of a fitted surrogate's predictive mean at each `t`.
    SurrogateArgmin {
        model: Arc<GpModel>,
        candidates_per_dim: usize,
        seed: u64,
    },
    /// Controls tabulated on an environmental grid, looked up by nearest
    /// grid neighbor so only validated controls are ever returned.
    Tabulated {
        grid: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    },
    /// An exact mapping supplied by the caller.
    Oracle(DecisionFn),
}

impl std::fmt::Debug for PersonalizedDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(s) => f.debug_tuple("Constant").field(s).finish(),
            Self::SurrogateArgmin { .. } => f.write_str("SurrogateArgmin"),
            Self::Tabulated { grid, .. } => {
                f.debug_struct("Tabulated").field("nodes", &grid.len()).finish()
            }
            Self::Oracle(_) => f.write_str("Oracle"),
        }
    }
}

impl PersonalizedDecision {
    pub fn surrogate(model: Arc<GpModel>) -> Self {
        Self::SurrogateArgmin {
            model,
            candidates_per_dim: 128,
            seed: 0,
        }
    }

    /// The control chosen for environment `t`.
    pub fn decide(&self, t: &[f64]) -> Vec<f64> {
        match self {
            Self::Constant(s) => s.clone(),
            Self::SurrogateArgmin {
                model,
                candidates_per_dim,
                seed,
            } => {
                let domain = model.data().domain();
                let spec = SearchSpec::new(domain.control().clone())
                    .with_candidates(candidates_per_dim * domain.p())
                    .with_seed(*seed);
                let (s, _) = opt::minimize(
                    |s| {
                        let x = domain.join(s, t);
                        model.predict(&x, 1.0).map(|p| p.mean).unwrap_or(f64::INFINITY)
                    },
                    &spec,
                )
                .expect("predictive mean is finite on the box");
                s
            }
            Self::Tabulated { grid, values } => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, g) in grid.iter().enumerate() {
                    let d: f64 = g.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                values[best].clone()
            }
            Self::Oracle(f) => f(t),
        }
    }

    /// Freezes this decision onto a grid for cheap repeated lookups.
    pub fn tabulate_on(&self, grid: &[Vec<f64>]) -> Self {
        Self::Tabulated {
            grid: grid.to_vec(),
            values: grid.iter().map(|t| self.decide(t)).collect(),
        }
    }
}

/// Expected cost: quadrature of `f(u(t), t)` against the density.
pub fn expected_cost(
    u: &PersonalizedDecision,
    f: &dyn BlackBox,
    density: &Density,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let env = f.domain().env();
    let (nodes, cell) = quad.nodes(env);
    let mut total = 0.0;
    for t in &nodes {
        let s = u.decide(t);
        let v = f.eval(&s, t)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteCost { value: v });
        }
        total += v * density.weight(t, env) * cell;
    }
    Ok(total)
}

/// Maximum cost: the grid maximum of `f(u(t), t)` refined by local polishes
/// from the best nodes (several, since the max surface is often multimodal).
pub fn max_cost(u: &PersonalizedDecision, f: &dyn BlackBox, quad: &QuadratureSpec) -> Result<f64> {
    let env = f.domain().env();
    let (nodes, _) = quad.nodes(env);
    let mut scored = Vec::with_capacity(nodes.len());
    for t in &nodes {
        let s = u.decide(t);
        let v = f.eval(&s, t)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteCost { value: v });
        }
        scored.push((t, v));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let objective = |t: &[f64]| {
        let s = u.decide(t);
        f.eval(&s, t).map(|v| -v).unwrap_or(f64::INFINITY)
    };
    let mut best = scored[0].1;
    for start in opt::diverse_starts(&scored, env, 4) {
        let (_, neg) = opt::nelder_mead(&objective, start, env, 200, 1e-6, 0.0);
        best = best.max(-neg);
    }
    Ok(best)
}

/// The constant decision minimizing expected cost, found by nested
/// quadrature inside a multistart search over the control box.
pub fn solve_u_e(
    f: &dyn BlackBox,
    density: &Density,
    quad: &QuadratureSpec,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let env = f.domain().env();
    let (nodes, cell) = quad.nodes(env);
    let weights: Vec<f64> = nodes.iter().map(|t| density.weight(t, env) * cell).collect();
    let spec = SearchSpec::new(f.domain().control().clone()).with_seed(seed);
    opt::minimize(
        |s| {
            let mut total = 0.0;
            for (t, w) in nodes.iter().zip(&weights) {
                match f.eval(s, t) {
                    Ok(v) if v.is_finite() => total += v * w,
                    _ => return f64::INFINITY,
                }
            }
            total
        },
        &spec,
    )
}

/// The constant decision minimizing worst-case cost (minimax), with the
/// inner maximum taken over the quadrature grid plus a local polish.
pub fn solve_u_m(f: &dyn BlackBox, quad: &QuadratureSpec, seed: u64) -> Result<(Vec<f64>, f64)> {
    let env = f.domain().env();
    let (nodes, _) = quad.nodes(env);
    let spec = SearchSpec::new(f.domain().control().clone()).with_seed(seed);
    opt::minimize(
        |s| {
            let mut scored = Vec::with_capacity(nodes.len());
            for t in &nodes {
                match f.eval(s, t) {
                    Ok(v) if v.is_finite() => scored.push((t, v)),
                    _ => return f64::INFINITY,
                }
            }
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            // Polish basin-diverse leading nodes: an underestimated inner
            // maximum would be exploited by the outer minimizer.
            let inner = |t: &[f64]| f.eval(s, t).map(|v| -v).unwrap_or(f64::INFINITY);
            let mut best = scored[0].1;
            for start in opt::diverse_starts(&scored, env, 4) {
                let (_, neg) = opt::nelder_mead(&inner, start, env, 60, 1e-6, 0.0);
                best = best.max(-neg);
            }
            best
        },
        &spec,
    )
}

/// One inequality failure found by [`dominance_check`].
#[derive(Debug, Clone)]
pub enum DominanceViolation {
    /// `f(pos(t), t) > f(u(t), t)` at a grid node.
    Pointwise {
        decision: String,
        t: Vec<f64>,
        pos_value: f64,
        value: f64,
    },
    /// An expected- or maximum-cost chain link failed.
    Chain { description: String, lhs: f64, rhs: f64 },
}

/// Cost summary and inequality audit for the profile optimal surface against
/// the constant robust decisions.
#[derive(Debug)]
pub struct DominanceReport {
    pub pos_expected: f64,
    pub pos_max: f64,
    pub ue_expected: f64,
    pub ue_max: f64,
    pub um_expected: f64,
    pub um_max: f64,
    /// Slack applied to every chain comparison.
    pub tol: f64,
    pub violations: Vec<DominanceViolation>,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Solves the profile optimum per grid node of the true function, then
/// verifies the pointwise dominance inequality and both cost chains.
/// Violations are report content, not errors.
pub fn dominance_check(
    f: &dyn BlackBox,
    u_e: &PersonalizedDecision,
    u_m: &PersonalizedDecision,
    extra: &[(String, &PersonalizedDecision)],
    quad: &QuadratureSpec,
) -> Result<DominanceReport> {
    let domain = f.domain();
    let (nodes, _) = quad.nodes(domain.env());

    // Grid-solved profile optimum of the true function.
    let spec = SearchSpec::new(domain.control().clone()).with_seed(quad.seed);
    let mut pos_values = Vec::with_capacity(nodes.len());
    for t in &nodes {
        let (s, v) = opt::minimize(
            |s| f.eval(s, t).unwrap_or(f64::INFINITY),
            &spec,
        )?;
        pos_values.push((s, v));
    }
    let pos = PersonalizedDecision::Tabulated {
        grid: nodes.clone(),
        values: pos_values.iter().map(|(s, _)| s.clone()).collect(),
    };

    let mut violations = Vec::new();
    let mut audit_pointwise = |name: &str, u: &PersonalizedDecision| -> Result<()> {
        for (t, (_, pos_v)) in nodes.iter().zip(&pos_values) {
            let v = f.eval(&u.decide(t), t)?;
            if *pos_v > v + 1e-9 {
                violations.push(DominanceViolation::Pointwise {
                    decision: name.to_string(),
                    t: t.clone(),
                    pos_value: *pos_v,
                    value: v,
                });
            }
        }
        Ok(())
    };
    audit_pointwise("u_e", u_e)?;
    audit_pointwise("u_m", u_m)?;
    for (name, u) in extra {
        audit_pointwise(name, u)?;
    }

    // Every cost in the chain checks is evaluated on the shared grid (no
    // off-grid polish), so the comparisons are between consistent
    // discretizations.
    let grid_max = |u: &PersonalizedDecision| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for t in &nodes {
            best = best.max(f.eval(&u.decide(t), t)?);
        }
        Ok(best)
    };
    let density = Density::Uniform;
    let pos_expected = expected_cost(&pos, f, &density, quad)?;
    let pos_max = grid_max(&pos)?;
    let ue_expected = expected_cost(u_e, f, &density, quad)?;
    let ue_max = grid_max(u_e)?;
    let um_expected = expected_cost(u_m, f, &density, quad)?;
    let um_max = grid_max(u_m)?;

    let tol = 2.0 * COST_TOL;
    let mut chain = |description: &str, lhs: f64, rhs: f64| {
        if lhs > rhs + tol * (1.0 + rhs.abs()) {
            violations.push(DominanceViolation::Chain {
                description: description.to_string(),
                lhs,
                rhs,
            });
        }
    };
    chain("expected: pos <= u_e", pos_expected, ue_expected);
    chain("expected: u_e <= u_m", ue_expected, um_expected);
    chain("max: pos <= u_m", pos_max, um_max);
    chain("max: u_m <= u_e", um_max, ue_max);

    Ok(DominanceReport {
        pos_expected,
        pos_max,
        ue_expected,
        ue_max,
        um_expected,
        um_max,
        tol,
        violations,
    })
}
