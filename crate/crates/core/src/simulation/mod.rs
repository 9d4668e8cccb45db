//! Simulation designs and the Monte Carlo harness.
//!
//! Three two-component designs are built in. Each subject draws its mixing
//! vector uniformly from `{(1,0), (0.6,0.4), (0.2,0.8), (0.16,0.84)}`, a latent
//! component label, an event time by inverting that component's CDF, and a
//! uniform censoring time whose upper bound is calibrated to a target
//! censoring rate.

mod config;
mod metrics;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::Serialize;

use crate::data::{validate_sample, MixtureSample, RawRow};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use config::SimulationConfig;
pub use metrics::{
    power_study, rejection_rates, run_replications, summarize, ComponentMetrics, EstimatorMetrics,
    EvalLayout, MetricsConfig, MetricsReport, PointMetrics, PowerStudy, RejectionRates, ReplicateCurves,
    TidyRow, NOMINAL_LEVELS,
};

/// Closed-form component CDFs used by the designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ComponentCdf {
    /// `(1 - exp(-t / scale)) / (1 - exp(-upper / scale))` on `[0, upper]`.
    TruncatedExponential { scale: f64, upper: f64 },
    /// `height / (1 + exp(-(t - mid) / spread))` up to `join`, then
    /// `intercept + slope * t` up to `end`, under a running-max envelope.
    /// Mass not reached by `end` sits at `+inf`.
    LogisticLinear {
        height: f64,
        mid: f64,
        spread: f64,
        join: f64,
        intercept: f64,
        slope: f64,
        end: f64,
    },
}

impl ComponentCdf {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            ComponentCdf::TruncatedExponential { scale, upper } => {
                if t > upper {
                    1.0
                } else {
                    (-t / scale).exp_m1() / (-upper / scale).exp_m1()
                }
            }
            ComponentCdf::LogisticLinear {
                height,
                mid,
                spread,
                join,
                intercept,
                slope,
                end,
            } => {
                let logistic = |s: f64| height / (1.0 + (-(s - mid) / spread).exp());
                if t <= join {
                    logistic(t)
                } else {
                    logistic(join).max(intercept + slope * t.min(end))
                }
            }
        }
    }

    /// Largest value the CDF reaches on the real line.
    pub fn sup(&self) -> f64 {
        self.eval(self.support_end())
    }

    /// Smallest time at which the CDF reaches its supremum.
    pub fn support_end(&self) -> f64 {
        match *self {
            ComponentCdf::TruncatedExponential { upper, .. } => upper,
            ComponentCdf::LogisticLinear { end, .. } => end,
        }
    }

    /// Points where the CDF has a kink, for piecewise integration.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            ComponentCdf::TruncatedExponential { upper, .. } => vec![upper],
            ComponentCdf::LogisticLinear {
                join,
                intercept,
                slope,
                end,
                ..
            } => {
                let level = self.eval(join);
                let cross = (level - intercept) / slope;
                let mut pts = vec![join, end];
                if cross > join && cross < end {
                    pts.push(cross);
                }
                pts.sort_by(f64::total_cmp);
                pts
            }
        }
    }

    /// Smallest `t` with `F(t) >= u`, to within `1e-10`; `+inf` when `u`
    /// exceeds the supremum.
    pub fn quantile(&self, u: f64) -> f64 {
        if u > self.sup() {
            return f64::INFINITY;
        }
        if u <= self.eval(0.0) {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, self.support_end());
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// Which built-in design a spec derives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    One,
    Two,
    Three,
    Custom,
}

impl ExperimentId {
    pub fn from_number(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            other => Err(Error::InvalidConfig(format!("unknown experiment {other}"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::One => "exp1",
            Self::Two => "exp2",
            Self::Three => "exp3",
            Self::Custom => "custom",
        }
    }
}

/// A complete simulation design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub f1: ComponentCdf,
    pub f2: ComponentCdf,
    /// First entries `lambda` of the mixing vectors `(lambda, 1 - lambda)`.
    pub lambdas: Vec<f64>,
    pub lambda_probs: Vec<f64>,
    pub n: usize,
    /// Target expected fraction of censored subjects.
    pub censoring: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Time of the pointwise bias table.
    pub eval_time: f64,
    /// Range of the evenly spaced estimation and testing grid.
    pub range: (f64, f64),
    /// Per-component range of the integrated absolute bias.
    pub iab_range: [(f64, f64); 2],
    /// Per-component range averaged in the coverage summary.
    pub coverage_range: [(f64, f64); 2],
}

const SUPPORT: [f64; 4] = [1.0, 0.6, 0.2, 0.16];

impl ExperimentSpec {
    pub fn experiment(id: ExperimentId, n: usize, censoring: f64, replicates: usize, seed: u64) -> Result<Self> {
        let texp = |scale, upper| ComponentCdf::TruncatedExponential { scale, upper };
        let logit = |height, intercept, slope| ComponentCdf::LogisticLinear {
            height,
            mid: 80.0,
            spread: 5.0,
            join: 100.0,
            intercept,
            slope,
            end: 300.0,
        };
        let (f1, f2, eval_time, range, iab_range, coverage_range) = match id {
            ExperimentId::One => (
                texp(1.0, 10.0),
                texp(2.8, 10.0),
                1.3,
                (0.0, 10.0),
                [(0.0, 10.0); 2],
                [(0.0, 4.0), (0.0, 9.0)],
            ),
            ExperimentId::Two => (
                logit(0.8, 0.678, 0.001),
                logit(0.2, -0.205, 0.004),
                85.0,
                (0.0, 100.0),
                [(0.0, 100.0); 2],
                [(48.0, 100.0); 2],
            ),
            ExperimentId::Three => (
                texp(4.0, 10.0),
                texp(2.0, 5.0),
                2.0,
                (0.0, 10.0),
                [(0.0, 10.0), (0.0, 5.0)],
                [(0.0, 10.0), (0.0, 5.0)],
            ),
            ExperimentId::Custom => {
                return Err(Error::InvalidConfig("custom designs are built field by field".into()))
            }
        };
        let spec = Self {
            id,
            f1,
            f2,
            lambdas: SUPPORT.to_vec(),
            lambda_probs: vec![0.25; 4],
            n,
            censoring,
            replicates,
            seed,
            eval_time,
            range,
            iab_range,
            coverage_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The same design with `F2` replaced by `F1`.
    pub fn null_variant(&self) -> Self {
        Self {
            f2: self.f1,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.censoring) {
            return Err(Error::InvalidConfig(format!(
                "censoring target {} is not in [0, 1)",
                self.censoring
            )));
        }
        if self.lambdas.is_empty()
            || self.lambdas.len() != self.lambda_probs.len()
            || self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l))
            || self.lambda_probs.iter().any(|p| !(*p >= 0.0))
            || (self.lambda_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig("mixing distribution is invalid".into()));
        }
        if !(self.range.0 < self.range.1) {
            return Err(Error::InvalidConfig("empty grid range".into()));
        }
        Ok(())
    }

    /// Mean mixing weight of component 1.
    pub fn mean_lambda(&self) -> f64 {
        self.lambdas.iter().zip(&self.lambda_probs).map(|(l, p)| l * p).sum()
    }

    /// Marginal CDF of the event time.
    pub fn mixture_cdf(&self, t: f64) -> f64 {
        let l = self.mean_lambda();
        l * self.f1.eval(t) + (1.0 - l) * self.f2.eval(t)
    }

    pub fn truth(&self, component: usize, t: f64) -> f64 {
        match component {
            0 => self.f1.eval(t),
            _ => self.f2.eval(t),
        }
    }

    /// Time recorded for a subject whose event never happens and who is never
    /// censored (possible only with a 0% target and residual mass at `+inf`).
    fn administrative_end(&self) -> f64 {
        self.f1.support_end().max(self.f2.support_end())
    }

    /// Expected censoring fraction under `C ~ Uniform(0, c)`:
    /// `(1 / c) * int_0^c P(S > s) ds`.
    pub fn censoring_rate(&self, c: f64) -> f64 {
        let mut cuts: Vec<f64> = self
            .f1
            .breakpoints()
            .into_iter()
            .chain(self.f2.breakpoints())
            .filter(|&b| b > 0.0 && b < c)
            .collect();
        cuts.push(c);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let survival = |s: f64| 1.0 - self.mixture_cdf(s);
        let mut total = 0.0;
        let mut lo = 0.0;
        for hi in cuts {
            total += simpson(survival, lo, hi, 512);
            lo = hi;
        }
        total / c
    }

    /// Upper bound of the uniform censoring law hitting the target rate,
    /// `None` for a 0% target.
    pub fn calibrate_censoring(&self) -> Result<Option<f64>> {
        let target = self.censoring;
        if target == 0.0 {
            return Ok(None);
        }
        let mut hi = self.administrative_end();
        let mut doublings = 0;
        while self.censoring_rate(hi) > target {
            hi *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::CalibrationFailure(format!(
                    "censoring rate {target} is below the mass at infinity"
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            // rate decreases in c
            if self.censoring_rate(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        let achieved = self.censoring_rate(c);
        if (achieved - target).abs() > 1e-3 {
            return Err(Error::CalibrationFailure(format!(
                "reached rate {achieved:.5} for target {target}"
            )));
        }
        Ok(Some(c))
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// A simulated data set together with its latent quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub sample: MixtureSample,
    /// Latent component (0 or 1) of each subject.
    pub labels: Vec<u8>,
    /// Latent event times (`+inf` for mass never reached).
    pub event_times: Vec<f64>,
}

/// Draws data sets from a spec with its censoring law calibrated once.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: ExperimentSpec,
    c_max: Option<f64>,
    mixing: WeightedIndex<f64>,
}

impl Generator {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let mixing = WeightedIndex::new(&spec.lambda_probs)
            .map_err(|e| Error::InvalidConfig(format!("mixing probabilities: {e}")))?;
        Ok(Self {
            c_max: spec.calibrate_censoring()?,
            spec: spec.clone(),
            mixing,
        })
    }

    pub fn spec(&self) -> &ExperimentSpec {
        &self.spec
    }

    pub fn censoring_bound(&self) -> Option<f64> {
        self.c_max
    }

    /// Data set number `index` of the spec's seed.
    pub fn replicate(&self, index: u64) -> Result<GeneratedSample> {
        self.draw(self.spec.n, &mut rng::stream(self.spec.seed, index))
    }

    pub fn draw(&self, n: usize, rng: &mut Rng) -> Result<GeneratedSample> {
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut event_times = Vec::with_capacity(n);
        for _ in 0..n {
            let lambda = self.spec.lambdas[self.mixing.sample(rng)];
            let first = rng.gen::<f64>() < lambda;
            let cdf = if first { &self.spec.f1 } else { &self.spec.f2 };
            let s = cdf.quantile(rng.gen::<f64>());
            let c = match self.c_max {
                Some(c) => rng.gen::<f64>() * c,
                None => f64::INFINITY,
            };
            let (time, status) = if s <= c {
                (s, 1.0)
            } else {
                (c, 0.0)
            };
            let time = if time.is_finite() {
                time
            } else {
                self.spec.administrative_end()
            };
            rows.push(RawRow::new(time, status, vec![lambda, 1.0 - lambda]));
            labels.push(if first { 0 } else { 1 });
            event_times.push(s);
        }
        Ok(GeneratedSample {
            sample: validate_sample(&rows)?,
            labels,
            event_times,
        })
    }
}

/// One data set from `spec` using the stream `(seed, 0)`.
pub fn sample_experiment(spec: &ExperimentSpec, seed: u64) -> Result<GeneratedSample> {
    Generator::new(spec)?.draw(spec.n, &mut rng::stream(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: ExperimentId, censoring: f64) -> ExperimentSpec {
        ExperimentSpec::experiment(id, 500, censoring, 10, 1).unwrap()
    }

    #[test]
    fn truth_at_reported_times() {
        let e1 = spec(ExperimentId::One, 0.0);
        assert!((e1.truth(0, 1.3) - 0.7275).abs() < 5e-5);
        assert!((e1.truth(1, 1.3) - 0.3822).abs() < 5e-5);
        let e2 = spec(ExperimentId::Two, 0.0);
        assert!((e2.truth(0, 85.0) - 0.5848).abs() < 5e-5);
        assert!((e2.truth(1, 85.0) - 0.1462).abs() < 5e-5);
    }

    #[test]
    fn upper_bounds_are_exact() {
        for id in [ExperimentId::One, ExperimentId::Three] {
            let s = spec(id, 0.0);
            assert_eq!(s.f1.eval(s.f1.support_end()), 1.0);
            assert_eq!(s.f2.eval(s.f2.support_end()), 1.0);
        }
    }

    #[test]
    fn experiment_two_envelope_is_monotone_with_residual_mass() {
        let s = spec(ExperimentId::Two, 0.0);
        for cdf in [s.f1, s.f2] {
            let mut prev = 0.0;
            for i in 0..=3000 {
                let v = cdf.eval(i as f64 * 0.1);
                assert!(v >= prev);
                prev = v;
            }
        }
        assert!((s.f1.sup() - 0.978).abs() < 1e-12);
        assert!((s.f2.sup() - 0.995).abs() < 1e-12);
        assert_eq!(s.f1.quantile(0.99), f64::INFINITY);
    }

    #[test]
    fn quantile_inverts() {
        let s = spec(ExperimentId::One, 0.0);
        for u in [0.01, 0.3, 0.5, 0.99] {
            let t = s.f1.quantile(u);
            assert!((s.f1.eval(t) - u).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_target_gives_no_censoring() {
        let g = sample_experiment(&spec(ExperimentId::One, 0.0), 3).unwrap();
        assert!(g.sample.observations().iter().all(|o| o.event));
        assert_eq!(g.sample.n(), 500);
    }

    #[test]
    fn calibrated_rate_matches_target() {
        for id in [ExperimentId::One, ExperimentId::Two, ExperimentId::Three] {
            for target in [0.2, 0.4] {
                let s = spec(id, target);
                let c = s.calibrate_censoring().unwrap().unwrap();
                assert!((s.censoring_rate(c) - target).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn censoring_rate_against_closed_form() {
        // uniform event time on [0, 1]: int_0^c (1 - s) ds / c = 1 - c/2 for c <= 1
        let s = ExperimentSpec {
            id: ExperimentId::Custom,
            f1: ComponentCdf::TruncatedExponential { scale: 1e9, upper: 1.0 },
            f2: ComponentCdf::TruncatedExponential { scale: 1e9, upper: 1.0 },
            ..spec(ExperimentId::One, 0.2)
        };
        assert!((s.censoring_rate(0.5) - 0.75).abs() < 1e-6);
        // for c > 1 the integral is 1/2
        assert!((s.censoring_rate(2.0) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn unreachable_target_fails() {
        // Experiment 2 keeps ~1.3% of mass at infinity
        let s = spec(ExperimentId::Two, 0.005);
        assert!(matches!(s.calibrate_censoring(), Err(Error::CalibrationFailure(_))));
    }

    #[test]
    fn replicates_are_reproducible() {
        let g = Generator::new(&spec(ExperimentId::Three, 0.2)).unwrap();
        assert_eq!(g.replicate(4).unwrap(), g.replicate(4).unwrap());
        assert_ne!(g.replicate(4).unwrap(), g.replicate(5).unwrap());
    }
}
