//! Estimation engine for weighted average treatment effects (WATE) on
//! propensity-score-defined target populations.
//!
//! The estimand is `gamma = E[lambda(e(X)) tau(X)] / E[lambda(e(X))]`, where
//! `e` is the propensity score, `tau` the conditional average treatment
//! effect, and `lambda` a weight function selecting the target population
//! (ATE, ATT, ATC, overlap, entropy, beta-family). The crate provides:
//!
//! - weight families with closed-form derivatives ([`weights`]),
//! - nuisance learners with cross-fitting and honesty auditing ([`learners`]),
//! - plug-in, influence-function, and debiased cross-fitted estimators
//!   ([`estimators`]), with variance estimation and split aggregation
//!   ([`inference`]),
//! - a Monte Carlo harness with reference data-generating processes,
//!   truth computation, and an orthogonality probe ([`simulation`]),
//! - weighted covariate balance and overlap diagnostics ([`diagnostics`]).
//!
//! All randomness flows through labeled streams ([`rng::Stream`]) derived
//! from a root seed, so results are bit-identical regardless of thread count
//! or execution order.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod normal;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod scores;
pub mod simulation;
pub mod split;
pub mod util;
pub mod weights;

pub use error::{Error, Result};
