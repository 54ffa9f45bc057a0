//! Multistart box-constrained derivative-free optimizer.
//!
//! Every inner argmin/argmax subproblem (acquisitions, profile extraction,
//! robust baselines) runs through [`minimize`]: score a space-filling
//! candidate set, then polish the best candidates with a simplex search
//! projected onto the box by coordinate clamping. Ties break toward the
//! lowest candidate index so runs are reproducible.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::SobolStream;
use crate::domain::Bounds;
use crate::error::{Error, Result};

/// Search budget and tolerances for [`minimize`]/[`maximize`].
#[derive(Debug, Clone)]
pub struct SearchSpec {
    pub bounds: Bounds,
    /// Total candidate count (default `128 * dim`).
    pub candidates: usize,
    /// How many of the best candidates get a simplex polish.
    pub polish_top: usize,
    /// Iteration cap per simplex polish.
    pub polish_max_iters: usize,
    /// Convergence tolerance on the argument (simplex diameter).
    pub x_tol: f64,
    /// Convergence tolerance on the value, relative to the candidate-stage
    /// value spread so it is invariant under affine rescaling of the
    /// objective.
    pub f_tol: f64,
    pub seed: u64,
}

impl SearchSpec {
    pub fn new(bounds: Bounds) -> Self {
        let dim = bounds.dim();
        Self {
            bounds,
            candidates: 128 * dim,
            polish_top: 4,
            polish_max_iters: 200,
            x_tol: 1e-6,
            f_tol: 1e-12,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_candidates(mut self, candidates: usize) -> Self {
        self.candidates = candidates.max(1);
        self
    }

    pub fn with_polish(mut self, top: usize, max_iters: usize) -> Self {
        self.polish_top = top;
        self.polish_max_iters = max_iters;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
        }
        if self.x_tol.is_nan() || self.x_tol <= 0.0 || self.f_tol < 0.0 {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded space-filling candidates: a Sobol' set under a random toroidal
/// shift, so distinct seeds explore distinct sets while staying
/// low-discrepancy.
pub(crate) fn candidate_set(bounds: &Bounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut stream = SobolStream::new(dim.min(crate::design::MAX_SOBOL_DIM)).expect("dim checked");
    (0..count)
        .map(|_| {
            let u = stream.next_point();
            let shifted: Vec<f64> = u
                .iter()
                .zip(&shift)
                .map(|(v, s)| {
                    let w = v + s;
                    if w >= 1.0 { w - 1.0 } else { w }
                })
                .collect();
            bounds.from_unit(&shifted)
        })
        .collect()
}

/// Greedy basin-diverse selection from a best-first scored list: walks the
/// ranking and keeps points separated by at least a tenth of the box
/// diagonal, so polish starts cover distinct local basins.
pub(crate) fn diverse_starts<'a>(
    scored: &'a [(&'a Vec<f64>, f64)],
    bounds: &Bounds,
    k: usize,
) -> Vec<&'a Vec<f64>> {
    let dim = bounds.dim();
    let min_sep2 = 0.01 * dim as f64; // (0.1 * diagonal)^2 in scaled coords
    let mut kept: Vec<&Vec<f64>> = Vec::with_capacity(k);
    for (t, _) in scored {
        let far_enough = kept.iter().all(|u| {
            let d2: f64 = t
                .iter()
                .zip(u.iter())
                .enumerate()
                .map(|(i, (a, b))| {
                    let w = bounds.width(i);
                    ((a - b) / w).powi(2)
                })
                .sum();
            d2 >= min_sep2
        });
        if far_enough {
            kept.push(t);
            if kept.len() == k {
                break;
            }
        }
    }
    if kept.is_empty() {
        kept.push(scored[0].0);
    }
    kept
}

/// Minimizes `objective` over the box in `spec`.
///
/// Returns the best `(point, value)` seen across candidates and polish runs;
/// the value is never worse than the best raw candidate.
pub fn minimize<F>(objective: F, spec: &SearchSpec) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    spec.validate()?;
    let candidates = candidate_set(&spec.bounds, spec.candidates, spec.seed);

    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let v = objective(c);
        if v.is_finite() {
            scored.push((i, v));
        }
    }
    if scored.is_empty() {
        return Err(Error::NonFiniteObjective);
    }
    // Strict less-than keeps the lowest index on ties.
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

    let spread = (scored.last().unwrap().1 - scored[0].1).abs();
    let f_tol_abs = spec.f_tol * spread;

    let (mut best_x, mut best_v) = (candidates[scored[0].0].clone(), scored[0].1);
    for &(idx, _) in scored.iter().take(spec.polish_top.max(1)) {
        let (x, v) = nelder_mead(
            &objective,
            &candidates[idx],
            &spec.bounds,
            spec.polish_max_iters,
            spec.x_tol,
            f_tol_abs,
        );
        if v.is_finite() && v < best_v {
            best_x = x;
            best_v = v;
        }
    }
    Ok((best_x, best_v))
}

/// Maximizes `objective` over the box: [`minimize`] applied to its negation.
pub fn maximize<F>(objective: F, spec: &SearchSpec) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let (x, v) = minimize(|x| -objective(x), spec)?;
    Ok((x, -v))
}

/// Bounded Nelder–Mead simplex search.
///
/// All vertices are projected onto the box by clamping before evaluation, so
/// the returned point always satisfies the bounds. Moves depend only on value
/// comparisons, which keeps the search path invariant under increasing affine
/// maps of the objective. Stops when the simplex diameter drops below
/// `x_tol`, the value range drops below `f_tol` (pass 0.0 to disable), or the
/// iteration cap is hit. Returns the best vertex seen.
pub fn nelder_mead<F>(
    f: &F,
    start: &[f64],
    bounds: &Bounds,
    max_iters: usize,
    x_tol: f64,
    f_tol: f64,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let clamped = |mut x: Vec<f64>| {
        bounds.clamp(&mut x);
        x
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(clamped(start.to_vec()));
    for i in 0..n {
        let mut v = start.to_vec();
        let step = 0.05 * bounds.width(i);
        v[i] = if v[i] + step <= bounds.upper()[i] {
            v[i] + step
        } else {
            v[i] - step
        };
        simplex.push(clamped(v));
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0_f64, f64::max);
        if diameter < x_tol {
            break;
        }
        if f_tol > 0.0 && values[n].is_finite() && values[n] - values[0] < f_tol {
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }

        let reflect = clamped(
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + alpha * (c - w))
                .collect(),
        );
        let f_r = eval(&reflect);

        if f_r < values[0] {
            let expand = clamped(
                centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| c + gamma * (r - c))
                    .collect(),
            );
            let f_e = eval(&expand);
            if f_e < f_r {
                simplex[n] = expand;
                values[n] = f_e;
            } else {
                simplex[n] = reflect;
                values[n] = f_r;
            }
        } else if f_r < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_r;
        } else {
            let (contract, f_c) = if f_r < values[n] {
                let c = clamped(
                    centroid
                        .iter()
                        .zip(&reflect)
                        .map(|(c, r)| c + rho * (r - c))
                        .collect(),
                );
                let v = eval(&c);
                (c, v)
            } else {
                let c = clamped(
                    centroid
                        .iter()
                        .zip(&simplex[n])
                        .map(|(c, w)| c - rho * (c - w))
                        .collect(),
                );
                let v = eval(&c);
                (c, v)
            };
            if f_c < values[n].min(f_r) {
                simplex[n] = contract;
                values[n] = f_c;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + sigma * (v - b))
                        .collect();
                    simplex[i] = clamped(shrunk);
                    values[i] = eval(&simplex[i]);
                }
            }
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)))
        .unwrap();
    (simplex[best].clone(), values[best])
}
