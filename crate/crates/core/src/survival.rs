//! Kaplan–Meier product-limit estimation with Greenwood variances.
//!
//! Events are taken to precede censorings recorded at the same time, so a
//! subject censored at `t` is still in the risk set for events at `t`.

use serde::Serialize;

use crate::curve::StepFunction;
use crate::data::TimeGrid;
use crate::error::{Error, Result};

/// Product-limit survival curve evaluated at its distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    /// `S(t)` on `[times[i], times[i + 1])`.
    pub survival: Vec<f64>,
    pub greenwood_var: Vec<f64>,
    /// Weighted number at risk just before each event time.
    pub at_risk: Vec<f64>,
    /// Weighted number of events at each event time.
    pub events: Vec<f64>,
    /// True when the input had no events; the curve is then `S = 1` everywhere.
    pub all_censored: bool,
}

impl KmCurve {
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&e| e <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// Greenwood variance of `S(t)`; zero before the first event.
    pub fn variance_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&e| e <= t) {
            0 => 0.0,
            i => self.greenwood_var[i - 1],
        }
    }

    pub fn as_step(&self) -> StepFunction {
        StepFunction::new(self.times.clone(), self.survival.clone(), 1.0)
            .expect("event times are strictly increasing")
    }
}

/// Observations sorted by time and grouped into distinct-time blocks.
#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    /// Row indices in ascending time order.
    order: Vec<usize>,
    /// `(time, start, end)` blocks over `order`.
    blocks: Vec<(f64, usize, usize)>,
    events: Vec<bool>,
}

impl RiskSets {
    pub(crate) fn new(times: &[f64], events: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let t = times[order[start]];
            let mut end = start;
            while end < order.len() && times[order[end]] == t {
                end += 1;
            }
            blocks.push((t, start, end));
            start = end;
        }
        Self {
            order,
            blocks,
            events: events.to_vec(),
        }
    }

    /// Distinct times carrying at least one event.
    pub(crate) fn event_times(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|&&(_, s, e)| self.order[s..e].iter().any(|&i| self.events[i]))
            .map(|&(t, _, _)| t)
            .collect()
    }

    /// Weighted product limit over every distinct event time of the full data.
    ///
    /// Returns `(time, at_risk, events)` per event time; rows with zero weight
    /// contribute nothing.
    pub(crate) fn tables(&self, weights: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut at_risk: f64 = self.order.iter().map(|&i| weights[i]).sum();
        for &(t, s, e) in &self.blocks {
            let rows = &self.order[s..e];
            let mut d = 0.0;
            let mut leaving = 0.0;
            let mut any_event = false;
            for &i in rows {
                leaving += weights[i];
                if self.events[i] {
                    d += weights[i];
                    any_event = true;
                }
            }
            if any_event {
                out.push((t, at_risk.max(0.0), d));
            }
            at_risk -= leaving;
        }
        out
    }
}

/// Survival after each event time from `(time, at_risk, events)` tables.
pub(crate) fn product_limit(tables: &[(f64, f64, f64)]) -> Vec<f64> {
    let mut s = 1.0;
    tables
        .iter()
        .map(|&(_, n, d)| {
            if n > 0.0 && d > 0.0 {
                s *= (1.0 - d / n).max(0.0);
            }
            s
        })
        .collect()
}

/// Kaplan–Meier estimator with optional positive case weights.
pub fn kaplan_meier(times: &[f64], events: &[bool], case_weights: Option<&[f64]>) -> Result<KmCurve> {
    if times.is_empty() {
        return Err(Error::EmptyInput);
    }
    if times.len() != events.len() {
        return Err(Error::InvalidProblem(format!(
            "{} times but {} status values",
            times.len(),
            events.len()
        )));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::InvalidProblem(format!("invalid time {t}")));
    }
    let unit;
    let weights = match case_weights {
        Some(w) => {
            if w.len() != times.len() {
                return Err(Error::InvalidProblem("weights length mismatch".into()));
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::InvalidProblem(format!("case weight {v} is not positive")));
            }
            w
        }
        None => {
            unit = vec![1.0; times.len()];
            &unit[..]
        }
    };

    let tables = RiskSets::new(times, events).tables(weights);
    let survival = product_limit(&tables);
    let mut greenwood = 0.0;
    let greenwood_var = tables
        .iter()
        .zip(&survival)
        .map(|(&(_, n, d), &s)| {
            if n > d {
                greenwood += d / (n * (n - d));
            }
            if s > 0.0 {
                s * s * greenwood
            } else {
                0.0
            }
        })
        .collect();

    Ok(KmCurve {
        all_censored: tables.is_empty(),
        times: tables.iter().map(|r| r.0).collect(),
        at_risk: tables.iter().map(|r| r.1).collect(),
        events: tables.iter().map(|r| r.2).collect(),
        survival,
        greenwood_var,
    })
}

/// `1 - S(t)` at each grid point.
pub fn km_to_cdf(curve: &KmCurve, grid: &TimeGrid) -> Vec<f64> {
    grid.times().iter().map(|&t| 1.0 - curve.survival_at(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_product_limit() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true], None).unwrap();
        assert_eq!(km.times, vec![1.0, 3.0]);
        assert!((km.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival_at(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival_at(3.0), 0.0);
        assert_eq!(km.at_risk, vec![3.0, 1.0]);
        // Greenwood at t=1: (2/3)^2 * 1/(3*2)
        assert!((km.greenwood_var[0] - (4.0 / 9.0) / 6.0).abs() < 1e-15);

        let grid = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let cdf = km_to_cdf(&km, &grid);
        assert!((cdf[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((cdf[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cdf[2], 1.0);
    }

    #[test]
    fn all_censored_is_flat() {
        let km = kaplan_meier(&[1.0, 2.0], &[false, false], None).unwrap();
        assert!(km.all_censored);
        assert_eq!(km.survival_at(10.0), 1.0);
        let grid = TimeGrid::new(vec![0.5, 5.0]).unwrap();
        assert_eq!(km_to_cdf(&km, &grid), vec![0.0, 0.0]);
    }

    #[test]
    fn single_event() {
        let km = kaplan_meier(&[5.0], &[true], None).unwrap();
        assert_eq!(km.survival_at(5.0), 0.0);
        assert_eq!(km.survival_at(4.9), 1.0);
        assert_eq!(km.greenwood_var, vec![0.0]);
    }

    #[test]
    fn events_precede_censoring_at_ties() {
        // censored at 2 stays at risk for the event at 2: S(2) = 1 - 1/2
        let km = kaplan_meier(&[2.0, 2.0], &[true, false], None).unwrap();
        assert_eq!(km.survival, vec![0.5]);
        assert_eq!(km.at_risk, vec![2.0]);
    }

    #[test]
    fn tied_events_aggregate() {
        let km = kaplan_meier(&[1.0, 1.0, 2.0, 3.0], &[true, true, true, false], None).unwrap();
        assert_eq!(km.events, vec![2.0, 1.0]);
        assert!((km.survival[0] - 0.5).abs() < 1e-15);
        assert!((km.survival[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn input_errors() {
        assert_eq!(kaplan_meier(&[], &[], None), Err(Error::EmptyInput));
        assert!(kaplan_meier(&[1.0], &[true, false], None).is_err());
        assert!(kaplan_meier(&[1.0], &[true], Some(&[0.0])).is_err());
    }

    #[test]
    fn grid_before_first_and_after_last_event() {
        let km = kaplan_meier(&[2.0, 4.0], &[true, true], None).unwrap();
        let grid = TimeGrid::new(vec![1.0, 10.0]).unwrap();
        assert_eq!(km_to_cdf(&km, &grid), vec![0.0, 1.0]);
    }

    fn arb_data() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u32..15).prop_map(f64::from), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn uncensored_km_is_the_empirical_cdf(times in proptest::collection::vec((0u32..20).prop_map(f64::from), 1..50)) {
            let events = vec![true; times.len()];
            let km = kaplan_meier(&times, &events, None).unwrap();
            let grid = TimeGrid::new((0..22).map(|j| j as f64 - 0.5).collect()).unwrap();
            let cdf = km_to_cdf(&km, &grid);
            for (t, f) in grid.times().iter().zip(&cdf) {
                let ecdf = times.iter().filter(|&&x| x <= *t).count() as f64 / times.len() as f64;
                prop_assert!((f - ecdf).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_invariant((times, events) in arb_data(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut idx: Vec<usize> = (0..times.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let t2: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let e2: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
            let a = kaplan_meier(&times, &events, None).unwrap();
            let b = kaplan_meier(&t2, &e2, None).unwrap();
            prop_assert_eq!(a.times, b.times);
            for (x, y) in a.survival.iter().zip(&b.survival) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn unit_weights_match_unweighted((times, events) in arb_data()) {
            let w = vec![1.0; times.len()];
            let a = kaplan_meier(&times, &events, None).unwrap();
            let b = kaplan_meier(&times, &events, Some(&w)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn survival_is_nonincreasing_in_unit_interval((times, events) in arb_data()) {
            let km = kaplan_meier(&times, &events, None).unwrap();
            prop_assert!(km.survival.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(km.survival.iter().all(|s| (0.0..=1.0).contains(s)));
            prop_assert!(km.at_risk.iter().all(|n| *n > 0.0));
        }
    }
}
