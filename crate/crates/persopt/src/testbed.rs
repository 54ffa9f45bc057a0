//! Benchmark functions on unit boxes and a budget-metering wrapper.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::domain::Domain;
use crate::error::{Error, Result};

/// A deterministic evaluation source for `f(s, t)`.
pub trait BlackBox: Sync {
    fn domain(&self) -> &Domain;
    fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64>;
}

/// A named benchmark function with fixed control/environment dimensions.
pub struct TestFunction {
    id: &'static str,
    domain: Domain,
    eval: fn(&[f64], &[f64]) -> f64,
}

impl TestFunction {
    /// Looks a function up by registry id: `"f1"`..`"f6"` or `"sq"`.
    pub fn by_id(id: &str) -> Result<Self> {
        type Eval = fn(&[f64], &[f64]) -> f64;
        let (id, p, q, eval): (&'static str, usize, usize, Eval) = match id {
            "sq" => ("sq", 1, 1, f_sq),
            "f1" => ("f1", 1, 1, f1),
            "f2" => ("f2", 1, 1, f2),
            "f3" => ("f3", 1, 1, f3),
            "f4" => ("f4", 1, 1, f4),
            "f5" => ("f5", 2, 2, f5),
            "f6" => ("f6", 4, 2, f6),
            _ => return Err(Error::UnknownFunction(id.to_string())),
        };
        Ok(Self {
            id,
            domain: Domain::unit(p, q).expect("positive dims"),
            eval,
        })
    }

    /// All registry ids.
    pub fn ids() -> &'static [&'static str] {
        &["sq", "f1", "f2", "f3", "f4", "f5", "f6"]
    }

    pub fn id(&self) -> &'static str {
        self.id
    }
}

impl BlackBox for TestFunction {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        if !self.domain.control().contains(s) || !self.domain.env().contains(t) {
            return Err(Error::OutOfDomain(format!("s={s:?}, t={t:?}")));
        }
        Ok((self.eval)(s, t))
    }
}

/// An arbitrary closure as a black box, for analytic examples and tests.
pub struct BlackBoxFn<F> {
    domain: Domain,
    f: F,
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Sync> BlackBoxFn<F> {
    pub fn new(domain: Domain, f: F) -> Self {
        Self { domain, f }
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Sync> BlackBox for BlackBoxFn<F> {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        Ok((self.f)(s, t))
    }
}

fn f_sq(s: &[f64], t: &[f64]) -> f64 {
    (s[0] - t[0]).powi(2)
}

fn f1(s: &[f64], t: &[f64]) -> f64 {
    let (s, t) = (s[0], t[0]);
    2.0 * (s.powi(3) - t).abs() + t.exp() * (s - 2.0 * t).powi(2)
}

fn f2(s: &[f64], t: &[f64]) -> f64 {
    let r = (s[0] * s[0] + t[0] * t[0]).sqrt();
    (10.0 * r).cos() / (r + 1.0)
}

fn f3(s: &[f64], t: &[f64]) -> f64 {
    let (s, t) = (s[0], t[0]);
    (3.0 - 2.0 * s + 3.0 * t).min(3.0 + 2.0 * s - t)
}

fn f4(s: &[f64], t: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let x1 = 15.0 * s[0] - 5.0;
    let x2 = 15.0 * t[0];
    (x2 - 5.1 / (4.0 * PI * PI) * x1 * x1 + 5.0 / PI * x1 - 6.0).powi(2)
        + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos()
        + 10.0
}

fn f5(s: &[f64], t: &[f64]) -> f64 {
    ((s[0] - (t[0] - t[1]).abs()).powi(2))
        + (s[1] - ((t[0] * t[0] + t[1] * t[1]) / 2.0).sqrt()).powi(4)
}

fn f6(s: &[f64], t: &[f64]) -> f64 {
    (5.0 * s[0] * s[0]).sin() * (t[0] + 2.0 * s[1])
        - (5.0 * s[2] * s[2]).cos() / (1.0 + s[3] * s[3]).sqrt()
        - 2.0 * t[1] * (s[0] - s[3])
}

/// Wraps a black box with an atomic evaluation counter and a hard cap.
pub struct MeteredBlackBox<B> {
    inner: B,
    counter: AtomicU64,
    cap: u64,
}

impl<B: BlackBox> MeteredBlackBox<B> {
    pub fn new(inner: B, cap: u64) -> Self {
        Self {
            inner,
            counter: AtomicU64::new(0),
            cap,
        }
    }

    /// Evaluations used so far.
    pub fn used(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: BlackBox> BlackBox for MeteredBlackBox<B> {
    fn domain(&self) -> &Domain {
        self.inner.domain()
    }

    fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        // Reserve a slot before delegating so the cap is never overshot,
        // even under concurrent callers.
        let prev = self.counter.fetch_add(1, Ordering::Relaxed);
        if prev >= self.cap {
            self.counter.fetch_sub(1, Ordering::Relaxed);
            return Err(Error::BudgetExhausted { cap: self.cap });
        }
        self.inner.eval(s, t)
    }
}
