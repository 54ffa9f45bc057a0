//! Gaussian-process (Kriging) surrogate.
//!
//! The model is a linear trend on `(1, s_1..s_p, t_1..t_q)` plus a zero-mean
//! stationary Gaussian process with separable Gaussian correlation
//! `exp(-sum_i theta_i u_i^2)`. Given the correlation parameters, the trend
//! coefficients and process variance have closed forms; the parameters
//! themselves are fitted by minimizing the profile negative log-likelihood
//! `n log(sigma2) + log det(R)` over a box in log scale. Everything
//! downstream is computed from one Cholesky factor of the nugget-regularized
//! correlation matrix via triangular solves; no matrix is ever explicitly
//! inverted.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::{Bounds, Dataset};
use crate::error::{Error, Result};
use crate::opt;

/// Hard cap for nugget escalation.
const NUGGET_CAP: f64 = 1e-6;

/// Inverse-squared length scales of the Gaussian correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationParams {
    theta: Vec<f64>,
}

impl CorrelationParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|&t| !t.is_finite() || t <= 0.0) {
            return Err(Error::InvalidArgument(
                "correlation parameters must all be positive and finite".into(),
            ));
        }
        Ok(Self { theta })
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// `exp(-sum_i theta_i u_i^2)` for a displacement `u`.
pub fn gaussian_correlation(u: &[f64], theta: &CorrelationParams) -> Result<f64> {
    if u.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            got: u.len(),
        });
    }
    Ok(correlation_at_zero(u, theta.values()))
}

fn correlation_at_zero(u: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = u.iter().zip(theta).map(|(ui, ti)| ti * ui * ui).sum();
    (-s).exp()
}

fn correlation_at(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(theta)
        .map(|((x, y), t)| {
            let u = x - y;
            t * u * u
        })
        .sum();
    (-s).exp()
}

/// Lower-triangular factor of the nugget-regularized correlation matrix.
#[derive(Debug, Clone)]
pub struct CorrelationFactor {
    l: DMatrix<f64>,
    nugget: f64,
    log_det: f64,
}

impl CorrelationFactor {
    /// Lower-triangular `L` with `L L' = R + nugget * I`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// The nugget actually used after any escalation.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// `log det(R + nugget * I)` from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// Builds and factors the correlation matrix, escalating the nugget tenfold
/// on factorization failure up to [`NUGGET_CAP`](self::NUGGET_CAP).
pub fn build_correlation_matrix(
    data: &Dataset,
    theta: &CorrelationParams,
    nugget: f64,
) -> Result<CorrelationFactor> {
    let n = data.n();
    if theta.dim() != data.domain().dim() {
        return Err(Error::DimensionMismatch {
            expected: data.domain().dim(),
            got: theta.dim(),
        });
    }
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in 0..i {
            let v = correlation_at(&data.points()[i], &data.points()[j], theta.values());
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }

    let mut delta = nugget.max(0.0);
    loop {
        let mut reg = r.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        if let Some(chol) = reg.cholesky() {
            let l = chol.unpack();
            let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
            return Ok(CorrelationFactor {
                l,
                nugget: delta,
                log_det,
            });
        }
        let next = if delta == 0.0 {
            default_nugget(n)
        } else {
            delta * 10.0
        };
        if next > NUGGET_CAP {
            return Err(Error::Factorization { nugget: delta });
        }
        delta = next;
    }
}

/// Default diagonal regularization, scaled with the run count.
pub fn default_nugget(n: usize) -> f64 {
    1e-10 * n as f64
}

/// Regressor vector `g(x) = (1, x_1, .., x_d)`.
fn regressors(x: &[f64]) -> DVector<f64> {
    let mut g = DVector::zeros(x.len() + 1);
    g[0] = 1.0;
    for (i, &v) in x.iter().enumerate() {
        g[i + 1] = v;
    }
    g
}

/// Everything the likelihood and the predictor need at a fixed theta.
struct FittedCore {
    factor: CorrelationFactor,
    /// `L^{-1} G`.
    a: DMatrix<f64>,
    /// Lower-triangular `K` with `K K' = G' R^{-1} G`.
    k: DMatrix<f64>,
    beta: DVector<f64>,
    sigma2: f64,
    q2: f64,
    /// `L^{-1}(y - G beta)`.
    resid_white: DVector<f64>,
}

impl std::fmt::Debug for FittedCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FittedCore")
            .field("sigma2", &self.sigma2)
            .field("q2", &self.q2)
            .field("nugget", &self.factor.nugget)
            .finish()
    }
}

impl FittedCore {
    fn new(data: &Dataset, theta: &CorrelationParams, nugget: f64) -> Result<Self> {
        let n = data.n();
        let d = data.domain().dim();
        let m = d + 1;
        if n <= m {
            return Err(Error::InvalidData(format!(
                "need more runs ({n}) than regressors ({m})"
            )));
        }
        let factor = build_correlation_matrix(data, theta, nugget)?;
        let l = factor.l();

        let mut g = DMatrix::zeros(n, m);
        for (i, x) in data.points().iter().enumerate() {
            g.set_row(i, &regressors(x).transpose());
        }
        let y = DVector::from_column_slice(data.responses());

        let a = l
            .solve_lower_triangular(&g)
            .expect("factor diagonal is positive");
        let b = l
            .solve_lower_triangular(&y)
            .expect("factor diagonal is positive");

        let rank = a.clone().rank(1e-10 * a.norm().max(1.0));
        if rank < m {
            return Err(Error::DegenerateDesign { rank, cols: m });
        }

        let ata = a.transpose() * &a;
        let k = ata
            .cholesky()
            .ok_or(Error::DegenerateDesign { rank, cols: m })?
            .unpack();
        let atb = a.transpose() * &b;
        // beta solves K K' beta = A' b.
        let tmp = k
            .solve_lower_triangular(&atb)
            .expect("K diagonal is positive");
        let beta = k
            .tr_solve_lower_triangular(&tmp)
            .expect("K diagonal is positive");

        let resid_white = &b - &a * &beta;
        let sigma2 = resid_white.norm_squared() / n as f64;
        let q2 = (b.norm_squared() - tmp.norm_squared()).max(0.0);

        Ok(Self {
            factor,
            a,
            k,
            beta,
            sigma2,
            q2,
            resid_white,
        })
    }

    fn negloglik(&self, n: usize) -> f64 {
        if self.sigma2 < f64::MIN_POSITIVE {
            return f64::INFINITY;
        }
        n as f64 * self.sigma2.ln() + self.factor.log_det()
    }
}

/// Generalized least squares at fixed correlation parameters: the trend
/// coefficients and the process variance `(y - G b)' R^{-1} (y - G b) / n`.
pub fn fit_gls(data: &Dataset, theta: &CorrelationParams) -> Result<(Vec<f64>, f64)> {
    let core = FittedCore::new(data, theta, default_nugget(data.n()))?;
    Ok((core.beta.iter().copied().collect(), core.sigma2))
}

/// Profile negative log-likelihood `n log(sigma2) + log det(R)` at fixed
/// theta (up to constants). Returns `+inf` when the variance estimate
/// underflows below the floating-point floor.
pub fn profile_negloglik(data: &Dataset, theta: &CorrelationParams) -> Result<f64> {
    let core = FittedCore::new(data, theta, default_nugget(data.n()))?;
    Ok(core.negloglik(data.n()))
}

/// Which degrees of freedom scale the prediction variance and the t
/// quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DofMode {
    /// `n - d`: the literal prediction-interval definition.
    #[default]
    NMinusD,
    /// `n - m` with `m = d + 1` regressors: the conventional choice.
    NMinusM,
}

/// Hyperparameter search settings for [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Multistart count is `starts_per_dim * d`.
    pub starts_per_dim: usize,
    /// Iteration cap for each local polish.
    pub polish_max_iters: usize,
    /// Skip the search and use these correlation parameters as-is.
    pub fixed_theta: Option<Vec<f64>>,
    /// Extra start (typically the previous fit's parameters).
    pub warm_start: Option<Vec<f64>>,
    pub dof: DofMode,
    /// Diagonal regularization; `None` means `1e-10 * n`.
    pub nugget: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            theta_min: 1e-3,
            theta_max: 1e3,
            starts_per_dim: 10,
            polish_max_iters: 100,
            fixed_theta: None,
            warm_start: None,
            dof: DofMode::default(),
            nugget: None,
            seed: 0,
        }
    }
}

/// Counters for numerically suspicious events, safe to bump from concurrent
/// readers of an otherwise immutable model.
#[derive(Debug, Default)]
pub struct FitDiagnostics {
    negative_variance_clamps: AtomicU64,
    out_of_domain_predictions: AtomicU64,
}

impl FitDiagnostics {
    pub fn negative_variance_clamps(&self) -> u64 {
        self.negative_variance_clamps.load(Ordering::Relaxed)
    }

    pub fn out_of_domain_predictions(&self) -> u64 {
        self.out_of_domain_predictions.load(Ordering::Relaxed)
    }
}

/// Point prediction: the mean, its standard deviation, and the lower end of
/// the `(1 - alpha)` prediction interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
}

/// A fitted Kriging surrogate. Immutable after fit; predictions may run
/// concurrently.
#[derive(Debug)]
pub struct GpModel {
    data: Dataset,
    theta: CorrelationParams,
    core: FittedCore,
    /// `R^{-1}(y - G beta)`, precomputed for the mean predictor.
    w: DVector<f64>,
    dof: f64,
    nll: f64,
    diagnostics: FitDiagnostics,
}

impl GpModel {
    /// Maximum-likelihood fit: minimizes the profile negative log-likelihood
    /// over the theta box in log coordinates, with space-filling multistarts
    /// each refined by a bounded simplex polish.
    pub fn fit(data: &Dataset, config: &FitConfig) -> Result<Self> {
        let d = data.domain().dim();
        if data.n() < d + 2 {
            return Err(Error::InvalidData(format!(
                "need at least d + 2 = {} runs, got {}",
                d + 2,
                data.n()
            )));
        }
        if !(config.theta_min > 0.0 && config.theta_min < config.theta_max) {
            return Err(Error::InvalidArgument("bad theta bounds".into()));
        }
        let nugget = config.nugget.unwrap_or_else(|| default_nugget(data.n()));

        if let Some(theta) = &config.fixed_theta {
            let theta = CorrelationParams::new(theta.clone())?;
            let core = FittedCore::new(data, &theta, nugget)?;
            return Ok(Self::assemble(data, theta, core, config));
        }

        let log_bounds = Bounds::new(
            vec![config.theta_min.ln(); d],
            vec![config.theta_max.ln(); d],
        )?;
        let mut starts = opt::candidate_set(&log_bounds, config.starts_per_dim * d, config.seed);
        if let Some(warm) = &config.warm_start
            && warm.len() == d && warm.iter().all(|t| *t > 0.0) {
                let mut z: Vec<f64> = warm.iter().map(|t| t.ln()).collect();
                log_bounds.clamp(&mut z);
                starts.insert(0, z);
            }

        let objective = |z: &[f64]| -> f64 {
            let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            match CorrelationParams::new(theta).and_then(|t| FittedCore::new(data, &t, nugget)) {
                Ok(core) => core.negloglik(data.n()),
                Err(_) => f64::INFINITY,
            }
        };
        let factorizes = |z: &[f64]| -> bool {
            let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            CorrelationParams::new(theta)
                .and_then(|t| FittedCore::new(data, &t, nugget))
                .is_ok()
        };

        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut any_factorized = false;
        let mut last_err = Error::Factorization { nugget: NUGGET_CAP };
        for start in &starts {
            let raw = objective(start);
            if raw.is_finite() {
                any_factorized = true;
            } else {
                match factorizes(start) {
                    true => any_factorized = true,
                    false => {
                        let theta: Vec<f64> = start.iter().map(|v| v.exp()).collect();
                        if let Err(e) = CorrelationParams::new(theta)
                            .and_then(|t| FittedCore::new(data, &t, nugget))
                        {
                            last_err = e;
                        }
                    }
                }
            }
            let (z, v) = opt::nelder_mead(
                &objective,
                start,
                &log_bounds,
                config.polish_max_iters,
                1e-4,
                0.0,
            );
            let (z, v) = if v <= raw { (z, v) } else { (start.clone(), raw) };
            if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
                best = Some((z, v));
            }
        }
        if !any_factorized {
            return Err(last_err);
        }
        let (z_best, v_best) = best.expect("at least one start");
        // A +inf optimum means the variance underflows at every theta (e.g.
        // an identically-zero response); any factorizable theta then yields
        // the exact interpolator.
        let z_final = if v_best.is_finite() {
            z_best
        } else {
            log_bounds.center()
        };
        let theta = CorrelationParams::new(z_final.iter().map(|v| v.exp()).collect())?;
        let core = FittedCore::new(data, &theta, nugget)?;
        Ok(Self::assemble(data, theta, core, config))
    }

    fn assemble(
        data: &Dataset,
        theta: CorrelationParams,
        core: FittedCore,
        config: &FitConfig,
    ) -> Self {
        let n = data.n() as f64;
        let d = data.domain().dim() as f64;
        let dof = match config.dof {
            DofMode::NMinusD => n - d,
            DofMode::NMinusM => n - d - 1.0,
        };
        // w = R^{-1}(y - G beta) = L'^{-1} resid_white.
        let w = core
            .factor
            .l()
            .tr_solve_lower_triangular(&core.resid_white)
            .expect("factor diagonal is positive");
        let nll = core.negloglik(data.n());
        Self {
            data: data.clone(),
            theta,
            core,
            w,
            dof,
            nll,
            diagnostics: FitDiagnostics::default(),
        }
    }

    /// Predictive mean, standard deviation, and the `(1 - alpha)` interval's
    /// lower bound at `x0`. `alpha = 1` collapses the bound onto the mean.
    pub fn predict(&self, x0: &[f64], alpha: f64) -> Result<Prediction> {
        let d = self.data.domain().dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1], got {alpha}"
            )));
        }
        if !self.data.domain().joint().contains(x0) {
            self.diagnostics
                .out_of_domain_predictions
                .fetch_add(1, Ordering::Relaxed);
        }

        // The nugget is treated as part of the correlation kernel (a spike
        // at zero distance), so the regularized model stays an exact
        // interpolator: at a stored training point the mean reproduces the
        // response and the variance vanishes.
        let delta = self.core.factor.nugget();
        let n = self.data.n();
        let mut r0 = DVector::zeros(n);
        for (i, xi) in self.data.points().iter().enumerate() {
            r0[i] = correlation_at(x0, xi, self.theta.values())
                + if x0 == xi.as_slice() { delta } else { 0.0 };
        }
        let g0 = regressors(x0);

        let mean = g0.dot(&self.core.beta) + r0.dot(&self.w);

        let c = self
            .core
            .factor
            .l()
            .solve_lower_triangular(&r0)
            .expect("factor diagonal is positive");
        let h = &g0 - self.core.a.transpose() * &c;
        let kh = self
            .core
            .k
            .solve_lower_triangular(&h)
            .expect("K diagonal is positive");
        let bracket = (1.0 + delta) - c.norm_squared() + kh.norm_squared();
        let mut phi2 = self.core.q2 / self.dof * bracket;
        if phi2 < 0.0 {
            if phi2 < -1e-8 * self.core.q2 {
                self.diagnostics
                    .negative_variance_clamps
                    .fetch_add(1, Ordering::Relaxed);
            }
            phi2 = 0.0;
        }
        let sd = phi2.sqrt();
        let lower = mean - sd * t_upper_quantile(self.dof, alpha);
        Ok(Prediction { mean, sd, lower })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn theta(&self) -> &CorrelationParams {
        &self.theta
    }

    pub fn beta(&self) -> Vec<f64> {
        self.core.beta.iter().copied().collect()
    }

    pub fn sigma2(&self) -> f64 {
        self.core.sigma2
    }

    pub fn q2(&self) -> f64 {
        self.core.q2
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn nugget(&self) -> f64 {
        self.core.factor.nugget()
    }

    /// The profile negative log-likelihood attained by the fit.
    pub fn negloglik(&self) -> f64 {
        self.nll
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }
}

/// Upper `alpha / 2` quantile of Student's t with `dof` degrees of freedom.
/// Exactly zero at `alpha = 1` (the median).
pub fn t_upper_quantile(dof: f64, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 0.0;
    }
    StudentsT::new(0.0, 1.0, dof)
        .expect("dof must be positive")
        .inverse_cdf(1.0 - alpha / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(theta: &[f64]) -> CorrelationParams {
        CorrelationParams::new(theta.to_vec()).unwrap()
    }

    fn dataset_1d(xs: &[f64], ys: &[f64]) -> Dataset {
        let dom = Domain::unit(1, 1).unwrap();
        // Quadratic second coordinate so G keeps full column rank.
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 0.1 + 0.8 * x * x]).collect();
        Dataset::new(dom, pts, ys.to_vec()).unwrap()
    }

    #[test]
    fn correlation_closed_forms() {
        assert_eq!(
            gaussian_correlation(&[0.0, 0.0], &params(&[1.0, 2.0])).unwrap(),
            1.0
        );
        assert_relative_eq!(
            gaussian_correlation(&[1.0], &params(&[1.0])).unwrap(),
            (-1.0_f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            gaussian_correlation(&[1.0, 2.0], &params(&[2.0, 0.5])).unwrap(),
            (-4.0_f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn correlation_rejects_bad_input() {
        assert!(gaussian_correlation(&[1.0], &params(&[1.0, 1.0])).is_err());
        assert!(CorrelationParams::new(vec![1.0, 0.0]).is_err());
        assert!(CorrelationParams::new(vec![-2.0]).is_err());
    }

    /// The duplicate tolerance at data admission is the layer that rejects
    /// coincident runs, keeping the correlation matrix factorizable.
    #[test]
    fn near_duplicate_points_rejected_before_factorization() {
        let dom = Domain::unit(1, 1).unwrap();
        let err = Dataset::new(
            dom,
            vec![vec![0.5, 0.5], vec![0.5 + 1e-12, 0.5]],
            vec![1.0, 2.0],
        );
        assert!(matches!(err, Err(Error::DuplicatePoint)));
    }

    #[test]
    fn nugget_escalation_rescues_ill_conditioned_matrix() {
        let dom = Domain::unit(1, 1).unwrap();
        // Admissible (just over the duplicate tolerance) but nearly singular.
        let data = Dataset::new(
            dom,
            vec![
                vec![0.5, 0.5],
                vec![0.5 + 3e-8, 0.5 + 3e-8],
                vec![0.9, 0.1],
            ],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let f = build_correlation_matrix(&data, &params(&[1e-3, 1e-3]), 0.0).unwrap();
        assert!(f.nugget() > 0.0, "escalated nugget expected");
    }

    #[test]
    fn huge_theta_factor_is_identity_like() {
        let dom = Domain::unit(1, 1).unwrap();
        let data = Dataset::new(
            dom,
            vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.9, 0.1]],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let delta = 1e-8;
        let f = build_correlation_matrix(&data, &params(&[1e3, 1e3]), delta).unwrap();
        for i in 0..3 {
            assert_relative_eq!(f.l()[(i, i)], (1.0 + delta).sqrt(), max_relative = 1e-10);
        }
    }

    /// Direct closed-form 3x3 Cholesky as an independent factorization
    /// oracle.
    #[test]
    fn factor_matches_direct_3x3_decomposition() {
        let dom = Domain::unit(1, 1).unwrap();
        let pts = vec![vec![0.0, 0.0], vec![0.5, 0.25], vec![1.0, 0.5]];
        let data = Dataset::new(dom, pts.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        let theta = params(&[1.0, 1.0]);
        let delta = 1e-10;
        let f = build_correlation_matrix(&data, &theta, delta).unwrap();

        let r = |i: usize, j: usize| -> f64 {
            let u: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect();
            gaussian_correlation(&u, &theta).unwrap() + if i == j { delta } else { 0.0 }
        };
        let l11 = r(0, 0).sqrt();
        let l21 = r(1, 0) / l11;
        let l31 = r(2, 0) / l11;
        let l22 = (r(1, 1) - l21 * l21).sqrt();
        let l32 = (r(2, 1) - l31 * l21) / l22;
        let l33 = (r(2, 2) - l31 * l31 - l32 * l32).sqrt();
        let expect = [
            (0, 0, l11),
            (1, 0, l21),
            (2, 0, l31),
            (1, 1, l22),
            (2, 1, l32),
            (2, 2, l33),
        ];
        for (i, j, v) in expect {
            assert_relative_eq!(f.l()[(i, j)], v, max_relative = 1e-12);
        }
    }

    #[test]
    fn gls_constant_response_has_zero_variance() {
        let data = dataset_1d(&[0.0, 0.3, 0.6, 1.0], &[2.5, 2.5, 2.5, 2.5]);
        let (beta, sigma2) = fit_gls(&data, &params(&[2.0, 1.0])).unwrap();
        assert_relative_eq!(beta[0], 2.5, max_relative = 1e-8);
        assert!(beta[1].abs() < 1e-8 && beta[2].abs() < 1e-8);
        assert!(sigma2 < 1e-16);
    }

    #[test]
    fn gls_reduces_to_ols_when_correlations_vanish() {
        let data = dataset_1d(&[0.05, 0.35, 0.65, 0.95], &[1.0, -0.5, 2.0, 0.3]);
        let (beta, _) = fit_gls(&data, &params(&[1e3, 1e3])).unwrap();

        // OLS oracle via the normal equations with an explicit inverse.
        let n = data.n();
        let mut g = DMatrix::zeros(n, 3);
        for (i, x) in data.points().iter().enumerate() {
            g[(i, 0)] = 1.0;
            g[(i, 1)] = x[0];
            g[(i, 2)] = x[1];
        }
        let y = DVector::from_column_slice(data.responses());
        let ols = (g.transpose() * &g).try_inverse().unwrap() * g.transpose() * y;
        for i in 0..3 {
            assert_relative_eq!(beta[i], ols[i], max_relative = 1e-6);
        }
    }

    /// Dense oracle evaluating the closed-form estimators with explicit
    /// inverses, an independent route from the triangular-solve path.
    fn dense_gls_oracle(
        data: &Dataset,
        theta: &CorrelationParams,
        delta: f64,
    ) -> (DVector<f64>, f64, f64) {
        let n = data.n();
        let d = data.domain().dim();
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = correlation_at(&data.points()[i], &data.points()[j], theta.values())
                    + if i == j { delta } else { 0.0 };
            }
        }
        let mut g = DMatrix::zeros(n, d + 1);
        for (i, x) in data.points().iter().enumerate() {
            g.set_row(i, &regressors(x).transpose());
        }
        let y = DVector::from_column_slice(data.responses());
        let r_inv = r.clone().try_inverse().unwrap();
        let gtri = g.transpose() * &r_inv;
        let beta = (&gtri * &g).try_inverse().unwrap() * &gtri * &y;
        let resid = &y - &g * &beta;
        let sigma2 = (resid.transpose() * &r_inv * &resid)[(0, 0)] / n as f64;
        let log_det = r.determinant().ln();
        (beta, sigma2, log_det)
    }

    #[test]
    fn gls_matches_dense_oracle() {
        let data = dataset_1d(&[0.05, 0.4, 0.7, 0.95], &[0.3, -1.2, 0.8, 2.0]);
        let theta = params(&[3.0, 0.7]);
        let (beta, sigma2) = fit_gls(&data, &theta).unwrap();
        let (beta_o, sigma2_o, _) = dense_gls_oracle(&data, &theta, default_nugget(data.n()));
        for i in 0..3 {
            assert_relative_eq!(beta[i], beta_o[i], max_relative = 1e-10);
        }
        assert_relative_eq!(sigma2, sigma2_o, max_relative = 1e-10);
    }

    #[test]
    fn negloglik_identity_correlation_case() {
        let data = dataset_1d(&[0.05, 0.35, 0.65, 0.95], &[1.0, -0.5, 2.0, 0.3]);
        let theta = params(&[1e3, 1e3]);
        let nll = profile_negloglik(&data, &theta).unwrap();
        let (_, sigma2) = fit_gls(&data, &theta).unwrap();
        // log det(I + delta I) is a few 1e-10; absorb it in the tolerance.
        assert_relative_eq!(nll, data.n() as f64 * sigma2.ln(), epsilon = 1e-6);
    }

    #[test]
    fn negloglik_shifts_exactly_under_response_scaling() {
        let ys = [0.4, -0.9, 1.7, 0.2, -0.6];
        let a = 3.7;
        let data = dataset_1d(&[0.0, 0.2, 0.5, 0.8, 1.0], &ys);
        let scaled: Vec<f64> = ys.iter().map(|y| a * y).collect();
        let data_scaled = dataset_1d(&[0.0, 0.2, 0.5, 0.8, 1.0], &scaled);
        let theta = params(&[2.0, 5.0]);
        let v1 = profile_negloglik(&data, &theta).unwrap();
        let v2 = profile_negloglik(&data_scaled, &theta).unwrap();
        assert_relative_eq!(v2 - v1, 2.0 * 5.0 * a.ln(), max_relative = 1e-9);
    }

    #[test]
    fn negloglik_matches_dense_oracle() {
        let data = dataset_1d(&[0.0, 0.25, 0.5, 0.75, 1.0], &[0.1, 0.9, -0.4, 1.3, 0.6]);
        let theta = params(&[4.0, 1.5]);
        let nll = profile_negloglik(&data, &theta).unwrap();
        let (_, sigma2_o, log_det_o) = dense_gls_oracle(&data, &theta, default_nugget(data.n()));
        assert_relative_eq!(
            nll,
            data.n() as f64 * sigma2_o.ln() + log_det_o,
            max_relative = 1e-9
        );
    }

    #[test]
    fn fit_recovers_noise_free_linear_trend() {
        let dom = Domain::unit(1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let ys: Vec<f64> = pts.iter().map(|x| 1.5 + 2.0 * x[0] - 0.5 * x[1]).collect();
        let data = Dataset::new(dom, pts, ys).unwrap();
        let model = GpModel::fit(&data, &FitConfig::default()).unwrap();
        assert!(model.sigma2() < 1e-12, "sigma2 = {}", model.sigma2());
        let pred = model.predict(&[0.21, 0.77], 0.1).unwrap();
        assert_relative_eq!(pred.mean, 1.5 + 2.0 * 0.21 - 0.5 * 0.77, epsilon = 1e-5);
    }

    #[test]
    fn fixed_theta_mode_equals_gls() {
        let data = dataset_1d(&[0.05, 0.4, 0.7, 0.95], &[0.3, -1.2, 0.8, 2.0]);
        let theta = vec![2.5, 0.9];
        let config = FitConfig {
            fixed_theta: Some(theta.clone()),
            ..FitConfig::default()
        };
        let model = GpModel::fit(&data, &config).unwrap();
        let (beta, sigma2) = fit_gls(&data, &params(&theta)).unwrap();
        assert_eq!(model.beta(), beta);
        assert_eq!(model.sigma2(), sigma2);
        assert_eq!(model.theta().values(), &theta[..]);
    }

    #[test]
    fn fit_beats_reference_theta_grid() {
        let dom = Domain::unit(1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let ys: Vec<f64> = pts
            .iter()
            .map(|x| (3.0 * x[0]).sin() + (x[1] - 0.3).powi(2))
            .collect();
        let data = Dataset::new(dom, pts, ys).unwrap();
        let model = GpModel::fit(&data, &FitConfig::default()).unwrap();

        let lo = 1e-3_f64.ln();
        let hi = 1e3_f64.ln();
        let grid: Vec<f64> = (0..20)
            .map(|i| (lo + i as f64 / 19.0 * (hi - lo)).exp())
            .collect();
        for &t1 in &grid {
            for &t2 in &grid {
                let nll = profile_negloglik(&data, &params(&[t1, t2])).unwrap();
                assert!(
                    model.negloglik() <= nll + 1e-9,
                    "grid theta ({t1}, {t2}) beats fit: {nll} < {}",
                    model.negloglik()
                );
            }
        }
    }

    #[test]
    fn predict_interpolates_training_points() {
        let data = dataset_1d(&[0.0, 0.33, 0.66, 1.0], &[0.2, -0.7, 1.1, 0.4]);
        let model = GpModel::fit(&data, &FitConfig::default()).unwrap();
        let sd_scale = (model.q2() / model.dof() + 1.0).sqrt();
        for (x, &y) in data.points().iter().zip(data.responses()) {
            let p = model.predict(x, 0.05).unwrap();
            assert!(
                (p.mean - y).abs() <= 1e-6 * (1.0 + y.abs()),
                "mean {} vs {}",
                p.mean,
                y
            );
            assert!(p.sd <= 1e-6 * sd_scale, "sd {} at training point", p.sd);
        }
    }

    #[test]
    fn alpha_one_collapses_bound_to_mean() {
        let data = dataset_1d(&[0.0, 0.33, 0.66, 1.0], &[0.2, -0.7, 1.1, 0.4]);
        let model = GpModel::fit(&data, &FitConfig::default()).unwrap();
        let p = model.predict(&[0.5, 0.1], 1.0).unwrap();
        assert_eq!(p.lower, p.mean);
        assert!(p.sd > 0.0);
    }

    /// Dense oracle for the predictor and its variance, using the literal
    /// bordered-matrix form with an explicit inverse.
    fn dense_predict_oracle(
        data: &Dataset,
        theta: &CorrelationParams,
        delta: f64,
        dof: f64,
        x0: &[f64],
    ) -> (f64, f64) {
        let n = data.n();
        let d = data.domain().dim();
        let m = d + 1;
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] = correlation_at(&data.points()[i], &data.points()[j], theta.values())
                    + if i == j { delta } else { 0.0 };
            }
        }
        let mut g = DMatrix::zeros(n, m);
        for (i, x) in data.points().iter().enumerate() {
            g.set_row(i, &regressors(x).transpose());
        }
        let y = DVector::from_column_slice(data.responses());
        let r_inv = r.clone().try_inverse().unwrap();
        let gtri = g.transpose() * &r_inv;
        let gig = (&gtri * &g).try_inverse().unwrap();
        let beta = &gig * &gtri * &y;

        let mut r0 = DVector::zeros(n);
        for (i, xi) in data.points().iter().enumerate() {
            r0[i] = correlation_at(x0, xi, theta.values());
        }
        let g0 = regressors(x0);
        let mean = g0.dot(&beta) + (r0.transpose() * &r_inv * (&y - &g * &beta))[(0, 0)];

        let q2 = (y.transpose() * (&r_inv - &r_inv * &g * &gig * &gtri) * &y)[(0, 0)];
        // Bordered matrix [[0, G'], [G, R]] inverted wholesale. The prior
        // term carries the same zero-distance spike as the model kernel.
        let mut bordered = DMatrix::zeros(m + n, m + n);
        bordered.view_mut((0, m), (m, n)).copy_from(&g.transpose());
        bordered.view_mut((m, 0), (n, m)).copy_from(&g);
        bordered.view_mut((m, m), (n, n)).copy_from(&r);
        let b_inv = bordered.try_inverse().unwrap();
        let mut v = DVector::zeros(m + n);
        for i in 0..m {
            v[i] = g0[i];
        }
        for i in 0..n {
            v[m + i] = r0[i];
        }
        let quad = (v.transpose() * &b_inv * &v)[(0, 0)];
        let phi2 = (q2 / dof * (1.0 + delta - quad)).max(0.0);
        (mean, phi2.sqrt())
    }

    #[test]
    fn predict_matches_dense_oracle() {
        let data = dataset_1d(&[0.1, 0.4, 0.6, 0.9], &[0.5, -0.2, 0.9, 1.4]);
        let theta = vec![6.0, 2.0];
        let config = FitConfig {
            fixed_theta: Some(theta.clone()),
            ..FitConfig::default()
        };
        let model = GpModel::fit(&data, &config).unwrap();
        for x0 in [[0.25, 0.45], [0.77, 0.12], [0.5, 0.99]] {
            let p = model.predict(&x0, 0.2).unwrap();
            let (mean_o, sd_o) =
                dense_predict_oracle(&data, &params(&theta), model.nugget(), model.dof(), &x0);
            assert_relative_eq!(p.mean, mean_o, max_relative = 1e-9);
            assert_relative_eq!(p.sd, sd_o, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_design_is_detected() {
        let dom = Domain::unit(1, 1).unwrap();
        // Every run shares the environmental coordinate: G loses rank.
        let pts = vec![
            vec![0.1, 0.5],
            vec![0.4, 0.5],
            vec![0.7, 0.5],
            vec![0.9, 0.5],
        ];
        let data = Dataset::new(dom, pts, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = fit_gls(&data, &params(&[1.0, 1.0]));
        assert!(matches!(r, Err(Error::DegenerateDesign { .. })), "{r:?}");
    }

    #[test]
    fn out_of_domain_predictions_are_flagged() {
        let data = dataset_1d(&[0.0, 0.33, 0.66, 1.0], &[0.2, -0.7, 1.1, 0.4]);
        let model = GpModel::fit(&data, &FitConfig::default()).unwrap();
        model.predict(&[0.5, 0.5], 0.1).unwrap();
        assert_eq!(model.diagnostics().out_of_domain_predictions(), 0);
        model.predict(&[1.5, 0.5], 0.1).unwrap();
        assert_eq!(model.diagnostics().out_of_domain_predictions(), 1);
    }

    #[test]
    fn t_quantile_reference_values() {
        assert_eq!(t_upper_quantile(26.0, 1.0), 0.0);
        assert_relative_eq!(t_upper_quantile(26.0, 0.1), 1.70562, max_relative = 1e-4);
        assert_relative_eq!(t_upper_quantile(5.0, 0.05), 2.5706, max_relative = 1e-4);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_dataset() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            (
                proptest::collection::vec(0.0..1.0f64, 5),
                proptest::collection::vec(-2.0..2.0f64, 5),
            )
                .prop_map(|(jitter, ys)| {
                    let xs: Vec<f64> = (0..5)
                        .map(|i| (i as f64 + 0.1 + 0.8 * jitter[i]) / 5.0)
                        .collect();
                    let ts: Vec<f64> = (0..5).map(|i| ((4 - i) as f64 + 0.5) / 5.0).collect();
                    (xs, ts, ys)
                })
        }

        fn build(xs: &[f64], ts: &[f64], ys: &[f64]) -> Dataset {
            let dom = Domain::unit(1, 1).unwrap();
            let pts: Vec<Vec<f64>> = xs.iter().zip(ts).map(|(&x, &t)| vec![x, t]).collect();
            Dataset::new(dom, pts, ys.to_vec()).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn affine_equivariance_at_fixed_theta(
                (xs, ts, ys) in arb_dataset(),
                a in 0.1..10.0f64,
                b in -5.0..5.0f64,
            ) {
                let data = build(&xs, &ts, &ys);
                let scaled: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
                let data2 = build(&xs, &ts, &scaled);
                let config = FitConfig {
                    fixed_theta: Some(vec![3.0, 1.0]),
                    ..FitConfig::default()
                };
                let m1 = GpModel::fit(&data, &config).unwrap();
                let m2 = GpModel::fit(&data2, &config).unwrap();
                for x0 in [[0.15, 0.25], [0.5, 0.5], [0.85, 0.75]] {
                    let p1 = m1.predict(&x0, 0.2).unwrap();
                    let p2 = m2.predict(&x0, 0.2).unwrap();
                    let scale = 1.0 + p2.mean.abs();
                    prop_assert!((p2.mean - (a * p1.mean + b)).abs() < 1e-7 * scale);
                    prop_assert!((p2.sd - a * p1.sd).abs() < 1e-7 * (1.0 + p2.sd.abs()));
                }
            }

            #[test]
            fn predictions_invariant_under_row_permutation(
                (xs, ts, ys) in arb_dataset(),
            ) {
                let data = build(&xs, &ts, &ys);
                let perm = [3usize, 0, 4, 1, 2];
                let xs2: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
                let ts2: Vec<f64> = perm.iter().map(|&i| ts[i]).collect();
                let ys2: Vec<f64> = perm.iter().map(|&i| ys[i]).collect();
                let data2 = build(&xs2, &ts2, &ys2);
                let config = FitConfig {
                    fixed_theta: Some(vec![2.0, 4.0]),
                    ..FitConfig::default()
                };
                let m1 = GpModel::fit(&data, &config).unwrap();
                let m2 = GpModel::fit(&data2, &config).unwrap();
                for x0 in [[0.2, 0.4], [0.6, 0.1], [0.9, 0.9]] {
                    let p1 = m1.predict(&x0, 0.3).unwrap();
                    let p2 = m2.predict(&x0, 0.3).unwrap();
                    prop_assert!((p1.mean - p2.mean).abs() < 1e-10 * (1.0 + p1.mean.abs()));
                    prop_assert!((p1.sd - p2.sd).abs() < 1e-10 * (1.0 + p1.sd.abs()));
                }
            }

            #[test]
            fn sd_nonnegative_everywhere(
                (xs, ts, ys) in arb_dataset(),
                x0 in 0.0..1.0f64,
                t0 in 0.0..1.0f64,
            ) {
                let data = build(&xs, &ts, &ys);
                let model = GpModel::fit(&data, &FitConfig::default()).unwrap();
                let p = model.predict(&[x0, t0], 0.1).unwrap();
                prop_assert!(p.sd >= 0.0);
                prop_assert!(model.sigma2() >= 0.0);
                prop_assert!(model.q2() >= 0.0);
            }
        }
    }
}
