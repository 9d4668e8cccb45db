//! NPMLE baselines for mixture data with finitely many mixing vectors.
//!
//! Type I inverts the subgroup Kaplan–Meier curves through the mixing
//! matrix by least squares. Type II maximises the mixture likelihood by EM
//! with a weighted product-limit step. Neither enforces monotonicity or
//! `[0, 1]` bounds on the returned values.

use nalgebra::{DMatrix, DVector};

use crate::curve::CurveSet;
use crate::data::{MixtureSample, TimeGrid};
use crate::error::{Error, Result};
use crate::survival::{kaplan_meier, product_limit, KmCurve, RiskSets};

use super::em_pava::sup_change;
use super::{EmConfig, EmSummary, EstimateReport, Init, Method};

/// Least-squares inversion of subgroup Kaplan–Meier curves.
///
/// With `weighted`, each grid point uses inverse Greenwood variances as
/// weights; points where some variance is not positive use equal weights.
pub fn npmle_type1(sample: &MixtureSample, grid: &TimeGrid, weighted: bool) -> Result<EstimateReport> {
    if !sample.identifiable() {
        return Err(Error::NotIdentifiable { k: sample.k() });
    }
    let k = sample.k();
    let support = sample.support();
    let m = support.len();
    let u = DMatrix::from_fn(m, k, |g, c| support[g].mix[c]);

    let mut curves: Vec<KmCurve> = Vec::with_capacity(m);
    let mut warnings = Vec::new();
    for g in 0..m {
        let (times, events): (Vec<f64>, Vec<bool>) = sample
            .observations()
            .iter()
            .zip(sample.groups())
            .filter(|(_, &gi)| gi == g)
            .map(|(o, _)| (o.time, o.event))
            .unzip();
        let km = kaplan_meier(&times, &events, None)?;
        if km.all_censored {
            warnings.push(format!("support group {} has no events", g + 1));
        }
        curves.push(km);
    }

    let ut = u.transpose();
    let unweighted = (&ut * &u).try_inverse().ok_or(Error::SingularDesign)? * &ut;
    let mut columns = vec![vec![0.0; grid.len()]; k];
    let mut fallbacks = 0usize;
    for (j, &t) in grid.times().iter().enumerate() {
        let y = DVector::from_fn(m, |g, _| 1.0 - curves[g].survival_at(t));
        let mut solution = None;
        if weighted {
            let var: Vec<f64> = curves.iter().map(|c| c.variance_at(t)).collect();
            if var.iter().all(|v| v.is_finite() && *v > 0.0) {
                let w = DMatrix::from_diagonal(&DVector::from_iterator(m, var.iter().map(|v| 1.0 / v)));
                let utw = &ut * w;
                solution = (&utw * &u).try_inverse().map(|inv| inv * utw * &y);
            }
            if solution.is_none() {
                fallbacks += 1;
            }
        }
        let f = solution.unwrap_or_else(|| &unweighted * &y);
        for c in 0..k {
            columns[c][j] = f[c];
        }
    }
    if fallbacks > 0 {
        warnings.push(format!(
            "{fallbacks} grid points lack positive Greenwood variances; equal weights used there"
        ));
    }
    Ok(EstimateReport {
        method: if weighted {
            Method::NpmleType1Weighted
        } else {
            Method::NpmleType1
        },
        curves: CurveSet::unconstrained(grid.clone(), columns)?,
        em: None,
        warnings,
        flagged_times: Vec::new(),
    })
}

/// Mixture-likelihood NPMLE by EM over component membership.
///
/// Each iteration computes `c_ik`, the posterior probability that row `i`
/// belongs to component `k`, and refits every component by a `c`-weighted
/// product limit on the distinct event times.
pub fn npmle_type2(sample: &MixtureSample, grid: &TimeGrid, config: &EmConfig) -> Result<EstimateReport> {
    config.validate()?;
    if !(sample.identifiable() || sample.fully_labeled()) {
        return Err(Error::NotIdentifiable { k: sample.k() });
    }
    let k = sample.k();
    let n = sample.n();
    let times = sample.times();
    let events = sample.events();
    let risk = RiskSets::new(&times, &events);
    let support = risk.event_times();
    if support.is_empty() {
        return Err(Error::NoEvents);
    }
    let d = support.len();
    // number of support times <= x_i
    let pos: Vec<usize> = times.iter().map(|&x| support.partition_point(|&s| s <= x)).collect();

    let mut f: Vec<Vec<f64>> = match config.init {
        Init::PooledKm => {
            let s = product_limit(&risk.tables(&vec![1.0; n]));
            vec![s.iter().map(|v| 1.0 - v).collect(); k]
        }
        Init::UniformLinear => {
            vec![(1..=d).map(|j| j as f64 / (d as f64 + 1.0)).collect(); k]
        }
    };
    let at = |col: &[f64], p: usize| if p == 0 { 0.0 } else { col[p - 1] };
    let jump = |col: &[f64], p: usize| at(col, p) - if p <= 1 { 0.0 } else { col[p - 2] };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut weights = vec![vec![0.0; n]; k];
    let loglik = |f: &[Vec<f64>]| -> f64 {
        sample
            .observations()
            .iter()
            .zip(&pos)
            .map(|(o, &p)| {
                let lik: f64 = (0..k)
                    .map(|c| o.mix[c] * if o.event { jump(&f[c], p) } else { 1.0 - at(&f[c], p) })
                    .sum();
                lik.ln()
            })
            .sum()
    };
    while iterations < config.max_iterations {
        trace.push(loglik(&f));
        for (i, (o, &p)) in sample.observations().iter().zip(&pos).enumerate() {
            let terms: Vec<f64> = (0..k)
                .map(|c| o.mix[c] * if o.event { jump(&f[c], p) } else { 1.0 - at(&f[c], p) })
                .collect();
            let total: f64 = terms.iter().sum();
            for c in 0..k {
                weights[c][i] = if total > 0.0 { terms[c] / total } else { o.mix[c] };
            }
        }
        let next: Vec<Vec<f64>> = weights
            .iter()
            .map(|w| product_limit(&risk.tables(w)).iter().map(|s| 1.0 - s).collect())
            .collect();
        let change = sup_change(&f, &next);
        f = next;
        iterations += 1;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let final_objective = loglik(&f);
    trace.push(final_objective);

    let columns = f
        .iter()
        .map(|col| {
            grid.times()
                .iter()
                .map(|&t| at(col, support.partition_point(|&s| s <= t)))
                .collect()
        })
        .collect();
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("no convergence after {iterations} iterations"));
    }
    Ok(EstimateReport {
        method: Method::NpmleType2,
        curves: CurveSet::unconstrained(grid.clone(), columns)?,
        em: Some(EmSummary {
            iterations,
            converged,
            final_objective,
            objective_trace: trace,
        }),
        warnings,
        flagged_times: Vec::new(),
    })
}
