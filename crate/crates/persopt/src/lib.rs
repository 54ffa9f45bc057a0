//! Personalized optimization of expensive black-box functions with
//! environmental inputs.
//!
//! A cost `f(s, t)` depends on control inputs `s` the experimenter chooses
//! and environmental inputs `t` the environment fixes. Instead of one robust
//! compromise value of `s`, personalized optimization approximates the whole
//! profile optimal surface `s(t) = argmin_s f(s, t)` so the best control can
//! be read off for each observed environment.
//!
//! The crate provides:
//!
//! * [`gp`] — Gaussian-process (Kriging) surrogates with closed-form GLS
//!   estimates, profile-likelihood hyperparameter fitting, and prediction
//!   intervals;
//! * [`design`] — Sobol' sequences and the maximin distance criterion;
//! * [`opt`] — the multistart box-constrained inner optimizer;
//! * [`sha`] — the two sequential design loops that concentrate runs near
//!   the profile optimal surface, with their stopping rules;
//! * [`robust`] — robust-optimization baselines and the expected/maximum
//!   cost functionals used to compare decisions;
//! * [`testbed`] — the benchmark functions and a budget-metering wrapper;
//! * [`bench`] and [`report`] — the experiment harness behind the CLI.

pub mod bench;
pub mod design;
pub mod domain;
pub mod error;
pub mod gp;
pub mod opt;
pub mod report;
pub mod robust;
pub mod sha;
pub mod testbed;

pub use error::{Error, Result};
