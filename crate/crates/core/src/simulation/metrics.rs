use rayon::prelude::*;
use serde::Serialize;

use crate::data::TimeGrid;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EmConfig, Method};
use crate::inference::{bootstrap_bands, permutation_test, sample_sd};
use crate::rng::child_seed;

use super::{ExperimentSpec, Generator};

/// Levels at which rejection rates are reported.
pub const NOMINAL_LEVELS: [f64; 4] = [0.01, 0.05, 0.10, 0.20];

/// Monte Carlo settings shared by all estimators of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsConfig {
    /// Bootstrap replicates per data set; 0 skips estimated sd and coverage.
    pub bootstrap: usize,
    pub level: f64,
    /// Evenly spaced points per component range.
    pub grid_points: usize,
    pub em: EmConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bootstrap: 100,
            level: 0.95,
            grid_points: 50,
            em: EmConfig::default(),
        }
    }
}

/// Where each summary reads its values from on the estimation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLayout {
    pub grid: TimeGrid,
    pub eval_index: usize,
    /// Grid indices of the evenly spaced points of each component's range.
    pub points: [Vec<usize>; 2],
    /// Subset of `points` inside the coverage range.
    pub coverage_points: [Vec<usize>; 2],
    /// Riemann step of each component's range.
    pub step: [f64; 2],
}

impl EvalLayout {
    /// Grid = evenly spaced points of both component ranges plus the
    /// pointwise evaluation time, so every summary reads values at exactly
    /// the times it reports.
    pub fn new(spec: &ExperimentSpec, grid_points: usize) -> Result<Self> {
        if grid_points == 0 {
            return Err(Error::InvalidConfig("grid_points must be positive".into()));
        }
        let even: Vec<TimeGrid> = spec
            .iab_range
            .iter()
            .map(|&(lo, hi)| TimeGrid::even(grid_points, lo, hi))
            .collect::<Result<_>>()?;
        let mut times: Vec<f64> = even.iter().flat_map(|g| g.times().to_vec()).collect();
        times.push(spec.eval_time);
        times.sort_by(f64::total_cmp);
        times.dedup();
        let grid = TimeGrid::new(times)?;
        let index = |t: f64| grid.position(t).expect("point was inserted into the grid");
        let points = [0, 1].map(|k| even[k].times().iter().map(|&t| index(t)).collect::<Vec<_>>());
        let coverage_points = [0, 1].map(|k| {
            let (lo, hi) = spec.coverage_range[k];
            points[k]
                .iter()
                .copied()
                .filter(|&j| grid.times()[j] > lo && grid.times()[j] <= hi)
                .collect()
        });
        let step = [0, 1].map(|k| (spec.iab_range[k].1 - spec.iab_range[k].0) / grid_points as f64);
        Ok(Self {
            eval_index: index(spec.eval_time),
            grid,
            points,
            coverage_points,
            step,
        })
    }
}

/// Estimates of one replicate: `values[k][j]`, with optional bootstrap output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateCurves {
    pub values: Vec<Vec<f64>>,
    pub bands: Option<Bands>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub sd: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMetrics {
    pub time: f64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub emp_sd: f64,
    pub est_sd: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentMetrics {
    pub pointwise: PointMetrics,
    pub iab: f64,
    pub avg_variance: f64,
    pub avg_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorMetrics {
    pub method: Method,
    pub components: Vec<ComponentMetrics>,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub n: usize,
    pub censoring_target: f64,
    pub censoring_realized: f64,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorMetrics>,
}

/// One line of the long-format result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TidyRow {
    pub table: String,
    pub estimator: String,
    pub component: String,
    pub metric: String,
    pub value: f64,
}

fn row(table: &str, estimator: Method, component: &str, metric: &str, value: f64) -> TidyRow {
    TidyRow {
        table: table.into(),
        estimator: estimator.to_string(),
        component: component.into(),
        metric: metric.into(),
        value,
    }
}

impl MetricsReport {
    pub fn tidy(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for e in &self.estimators {
            for (k, c) in e.components.iter().enumerate() {
                let comp = (k + 1).to_string();
                let p = &c.pointwise;
                rows.push(row("pointwise", e.method, &comp, "time", p.time));
                rows.push(row("pointwise", e.method, &comp, "truth", p.truth));
                rows.push(row("pointwise", e.method, &comp, "bias", p.bias));
                rows.push(row("pointwise", e.method, &comp, "emp_sd", p.emp_sd));
                if let Some(v) = p.est_sd {
                    rows.push(row("pointwise", e.method, &comp, "est_sd", v));
                }
                if let Some(v) = p.coverage {
                    rows.push(row("pointwise", e.method, &comp, "coverage", v));
                }
                rows.push(row("range", e.method, &comp, "iab", c.iab));
                rows.push(row("range", e.method, &comp, "avg_variance", c.avg_variance));
                if let Some(v) = c.avg_coverage {
                    rows.push(row("range", e.method, &comp, "avg_coverage", v));
                }
            }
            rows.push(row("run", e.method, "all", "replicates", e.replicates as f64));
            rows.push(row("run", e.method, "all", "failed", e.failed as f64));
        }
        rows
    }
}

/// Aggregates replicate estimates of one estimator against the truth.
///
/// `None` entries are failed replicates.
pub fn summarize(
    spec: &ExperimentSpec,
    layout: &EvalLayout,
    method: Method,
    replicates: &[Option<ReplicateCurves>],
) -> Result<EstimatorMetrics> {
    let ok: Vec<&ReplicateCurves> = replicates.iter().flatten().collect();
    let failed = replicates.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::TooManyFailures {
            failed,
            total: replicates.len(),
        });
    }
    let times = layout.grid.times();
    let mut components = Vec::with_capacity(2);
    let mut column = Vec::with_capacity(ok.len());
    for k in 0..2 {
        let truth = |j: usize| spec.truth(k, times[j]);
        let mean_at = |j: usize| ok.iter().map(|r| r.values[k][j]).sum::<f64>() / ok.len() as f64;
        let coverage_at = |j: usize| -> Option<f64> {
            let with: Vec<&Bands> = ok.iter().filter_map(|r| r.bands.as_ref()).collect();
            if with.is_empty() {
                return None;
            }
            let t = truth(j);
            let hit = with.iter().filter(|b| b.lower[k][j] <= t && t <= b.upper[k][j]).count();
            Some(hit as f64 / with.len() as f64)
        };

        let j = layout.eval_index;
        column.clear();
        column.extend(ok.iter().map(|r| r.values[k][j]));
        let mean = mean_at(j);
        let est_sds: Vec<f64> = ok.iter().filter_map(|r| r.bands.as_ref().map(|b| b.sd[k][j])).collect();
        let pointwise = PointMetrics {
            time: times[j],
            truth: truth(j),
            mean,
            bias: mean - truth(j),
            emp_sd: sample_sd(&column),
            est_sd: (!est_sds.is_empty()).then(|| est_sds.iter().sum::<f64>() / est_sds.len() as f64),
            coverage: coverage_at(j),
        };

        let iab = layout.points[k]
            .iter()
            .map(|&j| (mean_at(j) - truth(j)).abs() * layout.step[k])
            .sum();
        let avg_variance = layout.points[k]
            .iter()
            .map(|&j| {
                column.clear();
                column.extend(ok.iter().map(|r| r.values[k][j]));
                sample_sd(&column).powi(2)
            })
            .sum::<f64>()
            / layout.points[k].len() as f64;
        let covs: Vec<f64> = layout.coverage_points[k].iter().filter_map(|&j| coverage_at(j)).collect();
        let avg_coverage = (!covs.is_empty()).then(|| covs.iter().sum::<f64>() / covs.len() as f64);
        components.push(ComponentMetrics {
            pointwise,
            iab,
            avg_variance,
            avg_coverage,
        });
    }
    Ok(EstimatorMetrics {
        method,
        components,
        replicates: replicates.len(),
        failed,
    })
}

/// Runs `spec.replicates` data sets through every estimator and summarises.
pub fn run_replications(spec: &ExperimentSpec, methods: &[Method], config: &MetricsConfig) -> Result<MetricsReport> {
    config.em.validate()?;
    if config.bootstrap == 1 {
        return Err(Error::InvalidConfig("bootstrap needs 0 or at least 2 replicates".into()));
    }
    let generator = Generator::new(spec)?;
    let layout = EvalLayout::new(spec, config.grid_points)?;
    let per_replicate: Vec<(f64, Vec<Option<ReplicateCurves>>)> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let data = generator.replicate(r as u64)?;
            let sample = &data.sample;
            let fits = methods
                .iter()
                .enumerate()
                .map(|(m, &method)| {
                    let fit = estimate(method, sample, &layout.grid, &config.em).ok()?;
                    let bands = (config.bootstrap >= 2)
                        .then(|| {
                            let seed = child_seed(child_seed(spec.seed, r as u64), 1 + m as u64);
                            bootstrap_bands(sample, &layout.grid, method, &config.em, config.bootstrap, config.level, seed)
                                .ok()
                                .map(|b| Bands {
                                    sd: b.sd,
                                    lower: b.lower,
                                    upper: b.upper,
                                })
                        })
                        .flatten();
                    Some(ReplicateCurves {
                        values: fit.curves.columns().to_vec(),
                        bands,
                    })
                })
                .collect();
            Ok((sample.censored_fraction(), fits))
        })
        .collect::<Result<_>>()?;

    let realized = per_replicate.iter().map(|p| p.0).sum::<f64>() / per_replicate.len().max(1) as f64;
    let estimators = methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let reps: Vec<Option<ReplicateCurves>> = per_replicate.iter().map(|p| p.1[m].clone()).collect();
            summarize(spec, &layout, method, &reps)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        experiment: spec.id.label().into(),
        n: spec.n,
        censoring_target: spec.censoring,
        censoring_realized: realized,
        replicates: spec.replicates,
        seed: spec.seed,
        estimators,
    })
}

/// Empirical rejection rates of the permutation test for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRates {
    pub method: Method,
    pub levels: Vec<f64>,
    pub rates: Vec<f64>,
    pub p_values: Vec<f64>,
    pub failed: usize,
}

impl RejectionRates {
    pub fn rate_at(&self, level: f64) -> Option<f64> {
        self.levels.iter().position(|&l| l == level).map(|i| self.rates[i])
    }
}

/// Permutation-test p-values over `spec.replicates` data sets; a test rejects
/// at level `a` when `p <= a`. The grid is `grid_points` evenly spaced
/// points over `spec.range`.
pub fn rejection_rates(
    spec: &ExperimentSpec,
    methods: &[Method],
    permutations: usize,
    grid_points: usize,
    em: &EmConfig,
) -> Result<Vec<RejectionRates>> {
    let generator = Generator::new(spec)?;
    let grid = TimeGrid::even(grid_points, spec.range.0, spec.range.1)?;
    let p: Vec<Vec<Option<f64>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let data = generator.replicate(r as u64)?;
            Ok(methods
                .iter()
                .enumerate()
                .map(|(m, &method)| {
                    let seed = child_seed(child_seed(spec.seed, r as u64), 1000 + m as u64);
                    permutation_test(&data.sample, &grid, method, em, permutations, None, seed)
                        .ok()
                        .map(|res| res.p_value)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let p_values: Vec<f64> = p.iter().filter_map(|row| row[m]).collect();
            let failed = p.len() - p_values.len();
            if p_values.is_empty() {
                return Err(Error::TooManyFailures { failed, total: p.len() });
            }
            let rates = NOMINAL_LEVELS
                .iter()
                .map(|&a| p_values.iter().filter(|&&pv| pv <= a).count() as f64 / p_values.len() as f64)
                .collect();
            Ok(RejectionRates {
                method,
                levels: NOMINAL_LEVELS.to_vec(),
                rates,
                p_values,
                failed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerStudy {
    pub h0: Vec<RejectionRates>,
    pub h1: Vec<RejectionRates>,
}

impl PowerStudy {
    pub fn tidy(&self) -> Vec<TidyRow> {
        let mut rows = Vec::new();
        for (table, set) in [("rejection_h0", &self.h0), ("rejection_h1", &self.h1)] {
            for r in set {
                for (l, v) in r.levels.iter().zip(&r.rates) {
                    rows.push(row(table, r.method, "all", &format!("level_{l}"), *v));
                }
                rows.push(row(table, r.method, "all", "failed", r.failed as f64));
            }
        }
        rows
    }
}

/// Rejection rates under a null and an alternative design.
pub fn power_study(
    h0: &ExperimentSpec,
    h1: &ExperimentSpec,
    methods: &[Method],
    permutations: usize,
    grid_points: usize,
    em: &EmConfig,
) -> Result<PowerStudy> {
    Ok(PowerStudy {
        h0: rejection_rates(h0, methods, permutations, grid_points, em)?,
        h1: rejection_rates(h1, methods, permutations, grid_points, em)?,
    })
}
