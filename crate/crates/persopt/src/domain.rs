//! Boxes, input domains, and experiment data.
//!
//! The input space is a product of a control box (dimensions the experimenter
//! sets) and an environmental box (dimensions fixed by the environment). A
//! joint input is laid out as `(s_1..s_p, t_1..t_q)`.

use crate::error::{Error, Result};

/// Relative per-coordinate tolerance below which two points count as the same
/// design point.
pub const DUPLICATE_TOL: f64 = 1e-8;

/// An axis-aligned box with strictly positive widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(
                "bounds must be nonempty and of equal length".into(),
            ));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidArgument(format!(
                    "each lower bound must be finite and below its upper bound (got [{l}, {u}])"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit box `[0,1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v.is_finite() && *v >= *l && *v <= *u)
    }

    /// Projects `x` onto the box by coordinate clamping.
    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Maps a point of `[0,1)^dim` affinely into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * self.width(i))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| 0.5 * (self.lower[i] + self.upper[i]))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    /// All `2^dim` corner points. Intended for small dims only.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..(1usize << d))
            .map(|mask| {
                (0..d)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Concatenates two boxes into the joint product box.
    pub fn product(&self, other: &Bounds) -> Bounds {
        let mut lower = self.lower.clone();
        let mut upper = self.upper.clone();
        lower.extend_from_slice(&other.lower);
        upper.extend_from_slice(&other.upper);
        Bounds { lower, upper }
    }

    /// True when every coordinate of `a` and `b` agrees within the scaled
    /// duplicate tolerance.
    pub fn is_duplicate(&self, a: &[f64], b: &[f64]) -> bool {
        a.iter()
            .zip(b)
            .enumerate()
            .all(|(i, (x, y))| (x - y).abs() <= DUPLICATE_TOL * self.width(i))
    }
}

/// The product domain `D_s x D_t` of control and environmental inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    control: Bounds,
    env: Bounds,
}

impl Domain {
    pub fn new(control: Bounds, env: Bounds) -> Self {
        Self { control, env }
    }

    /// Unit boxes `[0,1]^p x [0,1]^q`.
    pub fn unit(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "both control and environmental dimensions must be at least 1".into(),
            ));
        }
        Ok(Self::new(Bounds::unit(p), Bounds::unit(q)))
    }

    pub fn p(&self) -> usize {
        self.control.dim()
    }

    pub fn q(&self) -> usize {
        self.env.dim()
    }

    /// Joint dimension `d = p + q`.
    pub fn dim(&self) -> usize {
        self.p() + self.q()
    }

    pub fn control(&self) -> &Bounds {
        &self.control
    }

    pub fn env(&self) -> &Bounds {
        &self.env
    }

    pub fn joint(&self) -> Bounds {
        self.control.product(&self.env)
    }

    /// Splits a joint point into its `(s, t)` parts.
    pub fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.p())
    }

    /// Concatenates `(s, t)` into a joint point.
    pub fn join(&self, s: &[f64], t: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(s);
        x.extend_from_slice(t);
        x
    }
}

/// Design points with their observed responses.
#[derive(Debug, Clone)]
pub struct Dataset {
    domain: Domain,
    points: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(domain: Domain, points: Vec<Vec<f64>>, responses: Vec<f64>) -> Result<Self> {
        if points.len() != responses.len() {
            return Err(Error::InvalidData(format!(
                "{} points but {} responses",
                points.len(),
                responses.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::InvalidData("need at least 2 design points".into()));
        }
        let mut data = Self {
            domain,
            points: Vec::with_capacity(points.len()),
            responses: Vec::with_capacity(responses.len()),
        };
        for (x, y) in points.into_iter().zip(responses) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    /// Appends one run, rejecting out-of-box and near-duplicate points.
    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        let joint = self.domain.joint();
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: x.len(),
            });
        }
        if !joint.contains(&x) {
            return Err(Error::OutOfDomain(format!("{x:?}")));
        }
        if !y.is_finite() {
            return Err(Error::InvalidData(format!("non-finite response {y}")));
        }
        if self.points.iter().any(|a| joint.is_duplicate(a, &x)) {
            return Err(Error::DuplicatePoint);
        }
        self.points.push(x);
        self.responses.push(y);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// The environmental coordinates of every design point.
    pub fn env_points(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|x| self.domain.split(x).1.to_vec())
            .collect()
    }

    /// True when `x` collides with an existing point under the duplicate rule.
    pub fn would_duplicate(&self, x: &[f64]) -> bool {
        let joint = self.domain.joint();
        self.points.iter().any(|a| joint.is_duplicate(a, x))
    }

    pub fn response_scale(&self) -> f64 {
        1.0 + self
            .responses
            .iter()
            .fold(0.0_f64, |acc, y| acc.max(y.abs()))
    }
}
