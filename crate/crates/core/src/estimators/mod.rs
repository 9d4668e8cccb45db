//! Estimators of the component distribution functions.
//!
//! * [`em_pava`]: EM over latent membership and survival indicators with an
//!   isotonic M-step; always returns genuine CDFs.
//! * [`binomial_pointwise_em`]: the same binomial likelihood maximised one
//!   grid point at a time without the monotonicity constraint.
//! * [`npmle_type1`] / [`npmle_type2`]: NPMLE baselines (subgroup
//!   Kaplan–Meier plus least squares, and the mixture-likelihood EM).
//! * [`kaplan_meier_labeled`]: per-component Kaplan–Meier on fully labeled rows.

mod binomial;
mod em_pava;
mod estep;
mod gof;
mod npmle;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::curve::CurveSet;
use crate::data::{MixtureSample, TimeGrid};
use crate::error::{Error, Result};
use crate::survival::{kaplan_meier, km_to_cdf};

pub use binomial::binomial_pointwise_em;
pub use em_pava::{em_pava, em_pava_observed};
pub use estep::{estep_weights, EmState};
pub use gof::ks_gof_statistic;
pub use npmle::{npmle_type1, npmle_type2};

/// Starting curves for the iterative estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Pooled `1 - KM` of the whole sample for every component.
    PooledKm,
    /// `F(t_j) = j / (h + 1)` for every component.
    UniformLinear,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled-km" | "pooled_km" => Ok(Init::PooledKm),
            "uniform" | "uniform_linear" | "uniform-linear" => Ok(Init::UniformLinear),
            other => Err(Error::InvalidConfig(format!("unknown initialisation `{other}`"))),
        }
    }
}

/// Stopping rule and initialisation shared by the EM-type estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Sup-norm of the curve change below which iteration stops.
    pub tolerance: f64,
    pub init: Init,
    /// Denominators of the imputation weights below this are clamped. With
    /// `0.0` clamping is off and an exactly zero denominator is an error.
    pub clamp_epsilon: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-8,
            init: Init::PooledKm,
            clamp_epsilon: 1e-12,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(self.clamp_epsilon >= 0.0) {
            return Err(Error::InvalidConfig("clamp epsilon must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Estimator tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EmPava,
    BinomialPointwise,
    NpmleType1,
    NpmleType1Weighted,
    NpmleType2,
    KaplanMeier,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::EmPava,
        Method::BinomialPointwise,
        Method::NpmleType1,
        Method::NpmleType1Weighted,
        Method::NpmleType2,
        Method::KaplanMeier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::EmPava => "em_pava",
            Method::BinomialPointwise => "binomial_pointwise",
            Method::NpmleType1 => "npmle_type1",
            Method::NpmleType1Weighted => "npmle_type1_weighted",
            Method::NpmleType2 => "npmle_type2",
            Method::KaplanMeier => "kaplan_meier",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator `{s}`")))
    }
}

/// Iteration summary of an EM-type run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    /// Objective at each iterate, starting with the initial curves.
    pub objective_trace: Vec<f64>,
}

impl EmSummary {
    /// Largest decrease between consecutive objective values (0 if none).
    pub fn max_descent(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Output of any estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub curves: CurveSet,
    pub em: Option<EmSummary>,
    pub warnings: Vec<String>,
    /// Grid times where a pointwise maximiser sits on the boundary of `[0, 1]^2`
    /// instead of solving the score equations (binomial_pointwise only).
    pub flagged_times: Vec<f64>,
}

/// Runs `method` on `sample` at the grid points.
pub fn estimate(
    method: Method,
    sample: &MixtureSample,
    grid: &TimeGrid,
    config: &EmConfig,
) -> Result<EstimateReport> {
    match method {
        Method::EmPava => em_pava(sample, grid, config),
        Method::BinomialPointwise => binomial_pointwise_em(sample, grid, config),
        Method::NpmleType1 => npmle_type1(sample, grid, false),
        Method::NpmleType1Weighted => npmle_type1(sample, grid, true),
        Method::NpmleType2 => npmle_type2(sample, grid, config),
        Method::KaplanMeier => kaplan_meier_labeled(sample, grid),
    }
}

/// Kaplan–Meier per component using only rows labeled with certainty.
///
/// Components without labeled rows get an all-zero curve and a warning.
pub fn kaplan_meier_labeled(sample: &MixtureSample, grid: &TimeGrid) -> Result<EstimateReport> {
    let mut warnings = Vec::new();
    let unlabeled = sample
        .observations()
        .iter()
        .filter(|o| !o.mix.contains(&1.0))
        .count();
    if unlabeled > 0 {
        warnings.push(format!("{unlabeled} rows with uncertain membership ignored"));
    }
    let mut columns = Vec::with_capacity(sample.k());
    for k in 0..sample.k() {
        let (times, events): (Vec<f64>, Vec<bool>) = sample
            .observations()
            .iter()
            .filter(|o| o.mix[k] == 1.0)
            .map(|o| (o.time, o.event))
            .unzip();
        if times.is_empty() {
            warnings.push(format!("no labeled rows for component {}", k + 1));
            columns.push(vec![0.0; grid.len()]);
            continue;
        }
        let km = kaplan_meier(&times, &events, None)?;
        if km.all_censored {
            warnings.push(format!("component {} has no events", k + 1));
        }
        columns.push(km_to_cdf(&km, grid));
    }
    Ok(EstimateReport {
        method: Method::KaplanMeier,
        curves: CurveSet::new(grid.clone(), columns)?,
        em: None,
        warnings,
        flagged_times: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("em-pava".parse::<Method>().unwrap(), Method::EmPava);
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EmConfig::default().validate().is_ok());
        let bad = EmConfig {
            tolerance: 0.0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EmConfig {
            max_iterations: 0,
            ..EmConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
