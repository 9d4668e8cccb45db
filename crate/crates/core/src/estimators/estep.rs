//! E-step quantities for the two-component binomial formulation.
//!
//! Every estimator here only needs, for each support group `g` and grid point
//! `t_j`, the totals `a_gj = sum (1 - w_ij)` and `b_gj = sum w_ij` over the rows
//! of the group. For monotone curves these come out of one bucket/prefix pass:
//! a censored row with `x_i <= t_j` contributes `A_g(t_j) / A_g(x_i)`, so
//! `b_gj = #{x_i > t_j} + A_g(t_j) * sum_{x_i <= t_j} 1 / A_g(x_i)`.

use nalgebra::DMatrix;

use crate::curve::CurveSet;
use crate::data::{MixtureSample, TimeGrid};
use crate::error::{Error, Result};

/// Full imputation matrices of one E-step (rows = observations, columns = grid).
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Posterior membership of component 1 given `F1`, `F2` and prior `lambda`.
///
/// Falls back to the prior when both terms vanish.
#[inline]
pub(crate) fn posterior(lambda: f64, p1: f64, p2: f64) -> f64 {
    let num = lambda * p1;
    let den = num + (1.0 - lambda) * p2;
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        lambda
    }
}

#[derive(Debug, Clone, Copy)]
struct Row {
    group: usize,
    event: bool,
    /// First grid index with `t_j >= x_i`.
    p: usize,
    /// Number of grid points `<= x_i`.
    q: usize,
}

/// Flattening of a component beyond its last informative observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tail {
    /// First grid index to overwrite.
    pub first: usize,
    /// Grid index whose value is carried forward; `None` carries 0.
    pub source: Option<usize>,
}

/// Sample and grid preprocessed for repeated E-steps.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub h: usize,
    pub lambdas: Vec<f64>,
    group_n: Vec<f64>,
    /// `#{x_i > t_j}` per group, row-major `g * h + j`.
    beyond: Vec<f64>,
    rows: Vec<Row>,
    /// Censored rows per group as `(row, p, q)`.
    censored: Vec<Vec<(usize, usize, usize)>>,
    pub tails: [Option<Tail>; 2],
    eps: f64,
}

/// Per-group totals of `1 - w` and `w`, row-major `g * h + j`.
#[derive(Debug, Clone)]
pub(crate) struct Sums {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Design {
    pub(crate) fn new(sample: &MixtureSample, grid: &TimeGrid, eps: f64) -> Self {
        let h = grid.len();
        let groups = sample.support().len();
        let lambdas: Vec<f64> = sample.support().iter().map(|s| s.mix[0]).collect();
        let mut group_n = vec![0.0; groups];
        let mut beyond = vec![0.0; groups * h];
        let mut censored = vec![Vec::new(); groups];
        let mut rows = Vec::with_capacity(sample.n());

        for (i, (obs, &g)) in sample.observations().iter().zip(sample.groups()).enumerate() {
            let p = grid.count_lt(obs.time);
            let q = grid.count_le(obs.time);
            group_n[g] += 1.0;
            for slot in &mut beyond[g * h..g * h + p] {
                *slot += 1.0;
            }
            if !obs.event && p < h {
                censored[g].push((i, p, q));
            }
            rows.push(Row {
                group: g,
                event: obs.event,
                p,
                q,
            });
        }

        let tails = [0, 1].map(|k| tail_of(sample, grid, k));
        Self {
            h,
            lambdas,
            group_n,
            beyond,
            rows,
            censored,
            tails,
            eps,
        }
    }

    pub(crate) fn groups(&self) -> usize {
        self.lambdas.len()
    }

    #[inline]
    fn mix_survival(&self, g: usize, f: &[Vec<f64>], q: usize) -> f64 {
        if q == 0 {
            return 1.0;
        }
        let l = self.lambdas[g];
        l * (1.0 - f[0][q - 1]) + (1.0 - l) * (1.0 - f[1][q - 1])
    }

    /// `1 / A_g(x_i)` for a censored row, or `None` when the row is clamped.
    #[inline]
    fn inverse_denominator(&self, row: usize, g: usize, f: &[Vec<f64>], q: usize) -> Result<Option<f64>> {
        let a = self.mix_survival(g, f, q);
        if self.eps > 0.0 {
            Ok((a >= self.eps).then(|| 1.0 / a))
        } else if a > 0.0 {
            Ok(Some(1.0 / a))
        } else {
            Err(Error::ZeroDenominator { row })
        }
    }

    /// Imputation weight of one row at one grid point.
    fn weight(&self, i: usize, j: usize, f: &[Vec<f64>]) -> Result<f64> {
        let row = self.rows[i];
        if j < row.p {
            return Ok(1.0);
        }
        if row.event {
            return Ok(0.0);
        }
        Ok(match self.inverse_denominator(i, row.group, f, row.q)? {
            Some(inv) => (self.mix_survival(row.group, f, j + 1) * inv).clamp(0.0, 1.0),
            None => 0.0,
        })
    }

    pub(crate) fn sums(&self, f: &[Vec<f64>]) -> Result<Sums> {
        let monotone = f.iter().all(|c| c.windows(2).all(|w| w[0] <= w[1]));
        if monotone {
            self.sums_monotone(f)
        } else {
            self.sums_general(f)
        }
    }

    fn sums_monotone(&self, f: &[Vec<f64>]) -> Result<Sums> {
        let h = self.h;
        let mut a = vec![0.0; self.groups() * h];
        let mut b = self.beyond.clone();
        let mut bucket = vec![0.0; h];
        for g in 0..self.groups() {
            if self.censored[g].is_empty() {
                for j in 0..h {
                    a[g * h + j] = self.group_n[g] - b[g * h + j];
                }
                continue;
            }
            bucket.iter_mut().for_each(|x| *x = 0.0);
            for &(row, p, q) in &self.censored[g] {
                if let Some(inv) = self.inverse_denominator(row, g, f, q)? {
                    bucket[p] += inv;
                }
            }
            let mut acc = 0.0;
            for j in 0..h {
                acc += bucket[j];
                let idx = g * h + j;
                b[idx] += self.mix_survival(g, f, j + 1) * acc;
                a[idx] = (self.group_n[g] - b[idx]).max(0.0);
            }
        }
        Ok(Sums { a, b })
    }

    /// Row-by-row totals; needed when curves may decrease and ratios exceed 1.
    fn sums_general(&self, f: &[Vec<f64>]) -> Result<Sums> {
        let h = self.h;
        let mut a = vec![0.0; self.groups() * h];
        let mut b = vec![0.0; self.groups() * h];
        for (i, row) in self.rows.iter().enumerate() {
            let base = row.group * h;
            for j in 0..h {
                let w = self.weight(i, j, f)?;
                b[base + j] += w;
                a[base + j] += 1.0 - w;
            }
        }
        Ok(Sums { a, b })
    }

    /// Binomial log-likelihood of the imputed indicators at the curves `f`.
    pub(crate) fn objective(&self, f: &[Vec<f64>], sums: &Sums) -> f64 {
        let h = self.h;
        let mut total = 0.0;
        for (g, &l) in self.lambdas.iter().enumerate() {
            for j in 0..h {
                let p = (l * f[0][j] + (1.0 - l) * f[1][j]).clamp(0.0, 1.0);
                total += xlogy(sums.a[g * h + j], p) + xlogy(sums.b[g * h + j], 1.0 - p);
            }
        }
        total
    }

    /// Overwrites the unidentified tail of each component in place.
    pub(crate) fn apply_tails(&self, f: &mut [Vec<f64>]) {
        for (k, tail) in self.tails.iter().enumerate() {
            if let Some(t) = tail {
                let value = t.source.map_or(0.0, |s| f[k][s]);
                for x in &mut f[k][t.first..] {
                    *x = value;
                }
            }
        }
    }
}

/// `a * ln(p)` with `0 * ln(0) = 0`.
#[inline]
pub(crate) fn xlogy(a: f64, p: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * p.ln()
    }
}

/// Grid points beyond the last observation that can carry mass for
/// component `k` are unidentified when that observation is censored: the
/// likelihood is flat there and EM would keep whatever it started with.
fn tail_of(sample: &MixtureSample, grid: &TimeGrid, k: usize) -> Option<Tail> {
    let relevant = || sample.observations().iter().filter(move |o| o.mix[k] > 0.0);
    let last = relevant().map(|o| o.time).fold(f64::NEG_INFINITY, f64::max);
    if !last.is_finite() {
        return None;
    }
    let censored_at_last = relevant().any(|o| o.time == last && !o.event);
    let first = grid.count_le(last);
    (censored_at_last && first < grid.len()).then(|| Tail {
        first,
        source: first.checked_sub(1),
    })
}

/// Full E-step matrices at `curves` for `sample` (components must be 2).
pub fn estep_weights(curves: &CurveSet, sample: &MixtureSample, clamp_epsilon: f64) -> Result<EmState> {
    sample.require_two_components(true)?;
    if curves.components() != 2 {
        return Err(Error::UnsupportedComponents {
            expected: 2,
            found: curves.components(),
        });
    }
    let grid = curves.grid();
    let design = Design::new(sample, grid, clamp_epsilon);
    let f = curves.columns();
    let (n, h) = (sample.n(), grid.len());
    let mut state = EmState {
        w: DMatrix::zeros(n, h),
        u: DMatrix::zeros(n, h),
        v: DMatrix::zeros(n, h),
        r1: DMatrix::zeros(n, h),
        r2: DMatrix::zeros(n, h),
        objective_trace: Vec::new(),
        iterations: 0,
    };
    for i in 0..n {
        let l = design.lambdas[design.rows[i].group];
        for j in 0..h {
            let w = design.weight(i, j, f)?;
            let u = posterior(l, f[0][j], f[1][j]);
            let v = posterior(l, 1.0 - f[0][j], 1.0 - f[1][j]);
            state.w[(i, j)] = w;
            state.u[(i, j)] = u;
            state.v[(i, j)] = v;
            state.r1[(i, j)] = u * (1.0 - w) + v * w;
            state.r2[(i, j)] = (1.0 - u) * (1.0 - w) + (1.0 - v) * w;
        }
    }
    let sums = design.sums(f)?;
    state.objective_trace.push(design.objective(f, &sums));
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_sample, RawRow};

    fn sample(rows: &[(f64, f64, f64)]) -> MixtureSample {
        let raw: Vec<RawRow> = rows
            .iter()
            .map(|&(t, d, l)| RawRow::new(t, d, vec![l, 1.0 - l]))
            .collect();
        validate_sample(&raw).unwrap()
    }

    fn curves(grid: &TimeGrid, f1: Vec<f64>, f2: Vec<f64>) -> CurveSet {
        CurveSet::new(grid.clone(), vec![f1, f2]).unwrap()
    }

    #[test]
    fn censored_weight_matches_formula() {
        // x=2 censored, lambda=0.6, grid {1, 3}, F1=(0.2,0.5), F2=(0.1,0.4)
        let s = sample(&[(2.0, 0.0, 0.6), (1.0, 1.0, 1.0), (4.0, 1.0, 0.0)]);
        let grid = TimeGrid::new(vec![1.0, 3.0]).unwrap();
        let c = curves(&grid, vec![0.2, 0.5], vec![0.1, 0.4]);
        let st = estep_weights(&c, &s, 1e-12).unwrap();
        assert_eq!(st.w[(0, 0)], 1.0);
        let ax = 0.6 * 0.8 + 0.4 * 0.9;
        let at = 0.6 * 0.5 + 0.4 * 0.6;
        assert!((st.w[(0, 1)] - at / ax).abs() < 1e-15);
        // uncensored rows are exact indicators
        assert_eq!(st.w[(1, 0)], 0.0);
        assert_eq!(st.w[(2, 0)], 1.0);
        assert_eq!(st.w[(2, 1)], 1.0);
        let u = 0.6 * 0.5 / (0.6 * 0.5 + 0.4 * 0.4);
        assert!((st.u[(0, 1)] - u).abs() < 1e-15);
        let v = 0.6 * 0.5 / (0.6 * 0.5 + 0.4 * 0.6);
        assert!((st.v[(0, 1)] - v).abs() < 1e-15);
        assert!(st.w.iter().chain(st.u.iter()).chain(st.v.iter()).all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn zero_denominators() {
        // F at the censoring time is 1 for both components
        let s = sample(&[(2.0, 0.0, 0.5), (1.0, 1.0, 1.0), (1.5, 1.0, 0.0)]);
        let grid = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let c = curves(&grid, vec![0.5, 1.0, 1.0], vec![0.5, 1.0, 1.0]);
        let st = estep_weights(&c, &s, 1e-12).unwrap();
        assert_eq!(st.w[(0, 1)], 0.0);
        assert_eq!(st.w[(0, 2)], 0.0);
        assert_eq!(estep_weights(&c, &s, 0.0), Err(Error::ZeroDenominator { row: 0 }));
    }

    #[test]
    fn posterior_falls_back_to_prior() {
        assert_eq!(posterior(0.3, 0.0, 0.0), 0.3);
        assert_eq!(posterior(1.0, 0.0, 0.5), 1.0);
        assert_eq!(posterior(0.0, 0.5, 0.5), 0.0);
    }

    #[test]
    fn aggregated_sums_match_full_matrix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let lambdas = [1.0, 0.6, 0.2, 0.16];
        let rows: Vec<(f64, f64, f64)> = (0..200)
            .map(|_| {
                let t = (rng.gen::<f64>() * 10.0 * 100.0).round() / 100.0;
                let d = if rng.gen::<f64>() < 0.6 { 1.0 } else { 0.0 };
                (t, d, lambdas[rng.gen_range(0..4)])
            })
            .collect();
        let s = sample(&rows);
        let grid = TimeGrid::even(30, 0.0, 10.0).unwrap();
        let f1: Vec<f64> = grid.times().iter().map(|t| 1.0 - (-t / 3.0f64).exp()).collect();
        let f2: Vec<f64> = grid.times().iter().map(|t| (t / 10.0).min(1.0)).collect();
        let c = curves(&grid, f1.clone(), f2.clone());
        let st = estep_weights(&c, &s, 1e-12).unwrap();
        let design = Design::new(&s, &grid, 1e-12);
        let f = vec![f1, f2];
        let fast = design.sums_monotone(&f).unwrap();
        let slow = design.sums_general(&f).unwrap();
        let h = grid.len();
        for g in 0..design.groups() {
            for j in 0..h {
                let from_matrix: f64 = (0..s.n())
                    .filter(|&i| s.groups()[i] == g)
                    .map(|i| st.w[(i, j)])
                    .sum();
                assert!((fast.b[g * h + j] - from_matrix).abs() < 1e-9);
                assert!((slow.b[g * h + j] - from_matrix).abs() < 1e-9);
                assert!((fast.a[g * h + j] - slow.a[g * h + j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tail_only_when_last_observation_is_censored() {
        let grid = TimeGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // component 1 last seen censored at 2.5; component 2 ends with an event
        let s = sample(&[(1.0, 1.0, 1.0), (2.5, 0.0, 1.0), (3.0, 1.0, 0.0), (4.0, 1.0, 0.0)]);
        let d = Design::new(&s, &grid, 1e-12);
        assert_eq!(d.tails[0], Some(Tail { first: 2, source: Some(1) }));
        assert_eq!(d.tails[1], None);
        let mut f = vec![vec![0.5, 0.5, 0.9, 0.9], vec![0.0, 0.0, 0.5, 1.0]];
        d.apply_tails(&mut f);
        assert_eq!(f[0], vec![0.5, 0.5, 0.5, 0.5]);
    }
}
