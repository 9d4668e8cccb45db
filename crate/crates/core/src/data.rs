//! Observations, validated mixture samples and evaluation grids.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a mixture vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// One unvalidated input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub time: f64,
    pub status: f64,
    pub mix: Vec<f64>,
}

impl RawRow {
    pub fn new(time: f64, status: f64, mix: impl Into<Vec<f64>>) -> Self {
        Self {
            time,
            status,
            mix: mix.into(),
        }
    }
}

/// One subject: observed time, event indicator and known membership probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
    pub mix: Vec<f64>,
}

impl Observation {
    /// Probability of belonging to the first component.
    pub fn lambda(&self) -> f64 {
        self.mix[0]
    }
}

/// A distinct mixture vector together with the number of subjects carrying it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportPoint {
    pub mix: Vec<f64>,
    pub count: usize,
}

impl SupportPoint {
    pub fn is_degenerate(&self) -> bool {
        self.mix.contains(&1.0)
    }
}

/// A validated collection of observations sharing the same component count.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    observations: Vec<Observation>,
    k: usize,
    support: Vec<SupportPoint>,
    /// Support index of every observation.
    groups: Vec<usize>,
    identifiable: bool,
}

impl MixtureSample {
    /// Builds a sample from already-typed observations, re-running validation.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        let rows: Vec<RawRow> = observations
            .into_iter()
            .map(|o| RawRow::new(o.time, if o.event { 1.0 } else { 0.0 }, o.mix))
            .collect();
        validate_sample(&rows)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support(&self) -> &[SupportPoint] {
        &self.support
    }

    /// Index into [`support`](Self::support) for each observation, in input order.
    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// True when the support spans at least `k` linearly independent vectors.
    pub fn identifiable(&self) -> bool {
        self.identifiable
    }

    /// True when every mixture vector puts all its mass on one component.
    pub fn fully_labeled(&self) -> bool {
        self.support.iter().all(SupportPoint::is_degenerate)
    }

    pub fn times(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.event).collect()
    }

    pub fn censored_fraction(&self) -> f64 {
        let censored = self.observations.iter().filter(|o| !o.event).count();
        censored as f64 / self.n() as f64
    }

    /// Re-pairs the `(time, event)` pairs according to `order` while keeping
    /// the mixture vectors in their original positions.
    pub fn permute_outcomes(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n(), "permutation length mismatch");
        let observations = order
            .iter()
            .zip(&self.observations)
            .map(|(&src, slot)| Observation {
                time: self.observations[src].time,
                event: self.observations[src].event,
                mix: slot.mix.clone(),
            })
            .collect();
        Self {
            observations,
            k: self.k,
            support: self.support.clone(),
            groups: self.groups.clone(),
            identifiable: self.identifiable,
        }
    }

    /// Sub-sample with the given row indices (repeats allowed).
    pub fn resample(&self, rows: &[usize]) -> Result<Self> {
        let obs = rows.iter().map(|&i| self.observations[i].clone()).collect();
        Self::from_observations(obs)
    }

    /// Requires exactly two components and an identifiable (or fully labeled) design.
    pub(crate) fn require_two_components(&self, allow_labeled: bool) -> Result<()> {
        if self.k != 2 {
            return Err(Error::UnsupportedComponents {
                expected: 2,
                found: self.k,
            });
        }
        if self.identifiable || (allow_labeled && self.fully_labeled()) {
            Ok(())
        } else {
            Err(Error::NotIdentifiable { k: self.k })
        }
    }
}

/// Validates raw rows into a [`MixtureSample`].
///
/// Accepted mixture vectors are renormalised to sum to exactly one.
pub fn validate_sample(rows: &[RawRow]) -> Result<MixtureSample> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let k = first.mix.len();
    if k == 0 {
        return Err(Error::InconsistentK {
            row: 0,
            expected: 1,
            found: 0,
        });
    }

    let mut observations = Vec::with_capacity(rows.len());
    for (row, raw) in rows.iter().enumerate() {
        if !raw.time.is_finite() || raw.time < 0.0 {
            return Err(Error::NegativeTime {
                row,
                time: raw.time,
            });
        }
        let event = if raw.status == 1.0 {
            true
        } else if raw.status == 0.0 {
            false
        } else {
            return Err(Error::BadStatus {
                row,
                status: raw.status,
            });
        };
        if raw.mix.len() != k {
            return Err(Error::InconsistentK {
                row,
                expected: k,
                found: raw.mix.len(),
            });
        }
        let in_range = raw
            .mix
            .iter()
            .all(|q| q.is_finite() && (0.0..=1.0).contains(q));
        let sum: f64 = raw.mix.iter().sum();
        if !in_range || (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::MixNotSimplex {
                row,
                mix: raw.mix.clone(),
            });
        }
        observations.push(Observation {
            time: raw.time,
            event,
            mix: renormalise(&raw.mix, sum),
        });
    }

    let mut support: Vec<SupportPoint> = Vec::new();
    let mut groups = Vec::with_capacity(observations.len());
    for obs in &observations {
        match support.iter().position(|s| s.mix == obs.mix) {
            Some(g) => {
                support[g].count += 1;
                groups.push(g);
            }
            None => {
                groups.push(support.len());
                support.push(SupportPoint {
                    mix: obs.mix.clone(),
                    count: 1,
                });
            }
        }
    }

    let identifiable = support_rank(&support, k) >= k;
    Ok(MixtureSample {
        observations,
        k,
        support,
        groups,
        identifiable,
    })
}

/// Divides by the sum, then sets the last entry to one minus the others so the
/// left-to-right sum is exactly 1 and a second pass is a no-op.
fn renormalise(mix: &[f64], sum: f64) -> Vec<f64> {
    let mut out: Vec<f64> = if sum == 1.0 {
        mix.to_vec()
    } else {
        mix.iter().map(|q| q / sum).collect()
    };
    let last = out.len() - 1;
    let others: f64 = out[..last].iter().sum();
    out[last] = (1.0 - others).max(0.0);
    out
}

fn support_rank(support: &[SupportPoint], k: usize) -> usize {
    let u = DMatrix::from_fn(support.len(), k, |r, c| support[r].mix[c]);
    u.rank(1e-9)
}

/// Strictly increasing, finite evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("grid must contain at least one time".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("grid times must be finite".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("grid times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `count` evenly spaced points on `(lo, hi]`.
    pub fn even(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "even grid needs count >= 1 and lo < hi (got {count}, {lo}, {hi})"
            )));
        }
        let step = (hi - lo) / count as f64;
        let mut times: Vec<f64> = (1..=count).map(|j| lo + step * j as f64).collect();
        times[count - 1] = hi;
        Self::new(times)
    }

    /// Returns a grid with the extra times merged in.
    pub fn with_times(&self, extra: &[f64]) -> Result<Self> {
        let mut times = self.times.clone();
        times.extend_from_slice(extra);
        times.sort_by(f64::total_cmp);
        times.dedup();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of grid points `<= t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&g| g <= t)
    }

    /// Number of grid points `< t`, i.e. the first index with `t_j >= t`.
    pub fn count_lt(&self, t: f64) -> usize {
        self.times.partition_point(|&g| g < t)
    }

    pub fn position(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&g| g == t)
    }
}

/// How to build an evaluation grid from a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GridMode {
    /// Sorted distinct uncensored times.
    EventTimes,
    /// `count` evenly spaced points on `(lo, hi]`.
    Even { count: usize, lo: f64, hi: f64 },
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridMode::EventTimes => write!(f, "events"),
            GridMode::Even { count, lo, hi } => write!(f, "even:{count}:{lo}:{hi}"),
        }
    }
}

impl FromStr for GridMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "events" || s == "event_times" {
            return Ok(GridMode::EventTimes);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["even", count, lo, hi] => {
                let bad = |what: &str| Error::InvalidGrid(format!("bad {what} in grid spec `{s}`"));
                Ok(GridMode::Even {
                    count: count.parse().map_err(|_| bad("count"))?,
                    lo: lo.parse().map_err(|_| bad("lower bound"))?,
                    hi: hi.parse().map_err(|_| bad("upper bound"))?,
                })
            }
            _ => Err(Error::InvalidGrid(format!(
                "expected `events` or `even:N:LO:HI`, got `{s}`"
            ))),
        }
    }
}

/// Builds the evaluation grid for `sample`.
pub fn default_grid(sample: &MixtureSample, mode: GridMode) -> Result<TimeGrid> {
    match mode {
        GridMode::Even { count, lo, hi } => TimeGrid::even(count, lo, hi),
        GridMode::EventTimes => {
            let mut times: Vec<f64> = sample
                .observations()
                .iter()
                .filter(|o| o.event)
                .map(|o| o.time)
                .collect();
            if times.is_empty() {
                return Err(Error::NoEvents);
            }
            times.sort_by(f64::total_cmp);
            times.dedup();
            TimeGrid::new(times)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[(f64, f64, &[f64])]) -> Vec<RawRow> {
        data.iter().map(|&(t, s, q)| RawRow::new(t, s, q)).collect()
    }

    #[test]
    fn labeled_two_group_sample_is_identifiable() {
        let s = validate_sample(&rows(&[(1.0, 1.0, &[1.0, 0.0]), (2.0, 0.0, &[0.0, 1.0])])).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.support().len(), 2);
        assert!(s.identifiable());
        assert!(s.fully_labeled());
    }

    #[test]
    fn single_support_point_is_not_identifiable() {
        let s = validate_sample(&rows(&[(1.0, 1.0, &[0.5, 0.5]), (2.0, 1.0, &[0.5, 0.5])])).unwrap();
        assert_eq!(s.support().len(), 1);
        assert_eq!(s.support()[0].count, 2);
        assert!(!s.identifiable());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            validate_sample(&rows(&[(1.0, 1.0, &[0.6, 0.5])])),
            Err(Error::MixNotSimplex { row: 0, .. })
        ));
        assert!(matches!(
            validate_sample(&rows(&[(1.0, 1.0, &[1.0, 0.0]), (-1.0, 1.0, &[1.0, 0.0])])),
            Err(Error::NegativeTime { row: 1, .. })
        ));
        assert!(matches!(
            validate_sample(&rows(&[(1.0, 2.0, &[1.0, 0.0])])),
            Err(Error::BadStatus { row: 0, .. })
        ));
        assert!(matches!(
            validate_sample(&rows(&[(1.0, 1.0, &[1.0, 0.0]), (1.0, 1.0, &[0.2, 0.3, 0.5])])),
            Err(Error::InconsistentK { row: 1, .. })
        ));
        assert!(matches!(
            validate_sample(&rows(&[(1.0, 1.0, &[1.2, -0.2])])),
            Err(Error::MixNotSimplex { .. })
        ));
        assert_eq!(validate_sample(&[]), Err(Error::EmptyInput));
        assert!(matches!(
            validate_sample(&rows(&[(f64::NAN, 1.0, &[1.0, 0.0])])),
            Err(Error::NegativeTime { .. })
        ));
    }

    #[test]
    fn renormalises_within_tolerance() {
        let s = validate_sample(&rows(&[(1.0, 1.0, &[0.3 + 5e-10, 0.7])])).unwrap();
        let sum: f64 = s.observations()[0].mix.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn event_time_grid_dedups_and_drops_censored() {
        let s = validate_sample(&rows(&[
            (3.0, 1.0, &[1.0, 0.0]),
            (1.0, 1.0, &[1.0, 0.0]),
            (3.0, 1.0, &[0.0, 1.0]),
            (2.0, 0.0, &[0.0, 1.0]),
        ]))
        .unwrap();
        let g = default_grid(&s, GridMode::EventTimes).unwrap();
        assert_eq!(g.times(), &[1.0, 3.0]);
    }

    #[test]
    fn event_grid_needs_events() {
        let s = validate_sample(&rows(&[(3.0, 0.0, &[1.0, 0.0])])).unwrap();
        assert_eq!(default_grid(&s, GridMode::EventTimes), Err(Error::NoEvents));
    }

    #[test]
    fn even_grids() {
        let g = TimeGrid::even(50, 0.0, 10.0).unwrap();
        assert_eq!(g.len(), 50);
        assert!((g.times()[0] - 0.2).abs() < 1e-12);
        assert!((g.times()[1] - 0.4).abs() < 1e-12);
        assert_eq!(g.times()[49], 10.0);

        let g = TimeGrid::even(50, 0.0, 100.0).unwrap();
        for (j, t) in g.times().iter().enumerate() {
            assert!((t - 2.0 * (j + 1) as f64).abs() < 1e-12);
        }
        assert!(TimeGrid::even(0, 0.0, 1.0).is_err());
        assert!(TimeGrid::even(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn grid_mode_parses() {
        assert_eq!("events".parse::<GridMode>().unwrap(), GridMode::EventTimes);
        assert_eq!(
            "even:50:0:100".parse::<GridMode>().unwrap(),
            GridMode::Even {
                count: 50,
                lo: 0.0,
                hi: 100.0
            }
        );
        assert!("even:x:0:1".parse::<GridMode>().is_err());
        let mode = GridMode::Even {
            count: 5,
            lo: 0.0,
            hi: 2.5,
        };
        assert_eq!(mode.to_string().parse::<GridMode>().unwrap(), mode);
    }

    #[test]
    fn grid_rejects_unsorted() {
        assert!(TimeGrid::new(vec![1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn permuting_outcomes_keeps_mix_order() {
        let s = validate_sample(&rows(&[
            (1.0, 1.0, &[1.0, 0.0]),
            (2.0, 0.0, &[0.0, 1.0]),
            (3.0, 1.0, &[0.5, 0.5]),
        ]))
        .unwrap();
        let p = s.permute_outcomes(&[2, 0, 1]);
        assert_eq!(p.observations()[0].time, 3.0);
        assert_eq!(p.observations()[0].mix, vec![1.0, 0.0]);
        assert_eq!(p.observations()[2].time, 2.0);
        assert!(!p.observations()[2].event);
        assert_eq!(p.observations()[2].mix, vec![0.5, 0.5]);
    }
}
