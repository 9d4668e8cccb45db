//! Nonparametric estimation of component distribution functions from
//! right-censored mixture data with known, subject-specific mixing
//! proportions.
//!
//! The central estimator is [`estimators::em_pava`]: an EM algorithm whose
//! M-step is a weighted isotonic regression, so every iterate is a genuine
//! set of CDFs. Baselines, hypothesis tests and a simulation harness are
//! built around it.

pub mod curve;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod isotonic;
pub mod rng;
pub mod simulation;
pub mod survival;

pub use curve::{eval_curve, CurveSet, StepFunction};
pub use data::{default_grid, validate_sample, GridMode, MixtureSample, Observation, RawRow, TimeGrid};
pub use error::{Error, Result};
pub use estimators::{estimate, EmConfig, EstimateReport, Init, Method};
