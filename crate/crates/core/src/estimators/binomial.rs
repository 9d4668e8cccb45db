//! Pointwise maximisation of the imputed binomial likelihood.
//!
//! At each grid point the two CDF values solve a concave problem on the unit
//! square. Nothing ties neighbouring points together, so the result can
//! decrease in `t`; the imputation weights are still recomputed jointly.

use crate::curve::CurveSet;
use crate::data::{MixtureSample, TimeGrid};
use crate::error::Result;

use super::em_pava::{initial_curves, sup_change};
use super::estep::{xlogy, Design};
use super::{EmConfig, EmSummary, EstimateReport, Method};

const EDGE: f64 = 1e-10;

/// Binomial EM without the monotonicity constraint.
pub fn binomial_pointwise_em(
    sample: &MixtureSample,
    grid: &TimeGrid,
    config: &EmConfig,
) -> Result<EstimateReport> {
    config.validate()?;
    sample.require_two_components(true)?;
    let design = Design::new(sample, grid, config.clamp_epsilon);
    let h = grid.len();
    let mut f = initial_curves(sample, grid, config.init, 2)?;
    design.apply_tails(&mut f);

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut on_edge = vec![false; h];
    let groups = design.groups();
    let mut a = vec![0.0; groups];
    let mut b = vec![0.0; groups];
    while iterations < config.max_iterations {
        let sums = design.sums(&f)?;
        trace.push(design.objective(&f, &sums));
        let mut next = vec![vec![0.0; h]; 2];
        for j in 0..h {
            for g in 0..groups {
                a[g] = sums.a[g * h + j];
                b[g] = sums.b[g * h + j];
            }
            let point = PointProblem {
                lambdas: &design.lambdas,
                a: &a,
                b: &b,
            };
            let (x, y, interior) = point.solve(f[0][j], f[1][j]);
            next[0][j] = x;
            next[1][j] = y;
            on_edge[j] = !interior;
        }
        design.apply_tails(&mut next);
        let change = sup_change(&f, &next);
        f = next;
        iterations += 1;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    let sums = design.sums(&f)?;
    let final_objective = design.objective(&f, &sums);
    trace.push(final_objective);

    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!("no convergence after {iterations} iterations"));
    }
    let flagged_times: Vec<f64> = grid
        .times()
        .iter()
        .zip(&on_edge)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    if !flagged_times.is_empty() {
        warnings.push(format!(
            "{} grid points have no interior root; boundary maximiser used",
            flagged_times.len()
        ));
    }
    Ok(EstimateReport {
        method: Method::BinomialPointwise,
        curves: CurveSet::unconstrained(grid.clone(), f)?,
        em: Some(EmSummary {
            iterations,
            converged,
            final_objective,
            objective_trace: trace,
        }),
        warnings,
        flagged_times,
    })
}

/// `max sum_g a_g ln p_g + b_g ln(1 - p_g)` with `p_g = l_g x + (1 - l_g) y`.
pub(crate) struct PointProblem<'a> {
    pub lambdas: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
}

impl PointProblem<'_> {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.lambdas
            .iter()
            .zip(self.a.iter().zip(self.b))
            .map(|(&l, (&a, &b))| {
                let p = (l * x + (1.0 - l) * y).clamp(0.0, 1.0);
                xlogy(a, p) + xlogy(b, 1.0 - p)
            })
            .sum()
    }

    /// Derivative of the objective along `p_g`.
    fn slope(a: f64, b: f64, p: f64) -> f64 {
        let up = if a == 0.0 { 0.0 } else { a / p };
        let down = if b == 0.0 { 0.0 } else { b / (1.0 - p) };
        up - down
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (&l, (&a, &b)) in self.lambdas.iter().zip(self.a.iter().zip(self.b)) {
            let s = Self::slope(a, b, (l * x + (1.0 - l) * y).clamp(0.0, 1.0));
            if l > 0.0 {
                gx += l * s;
            }
            if l < 1.0 {
                gy += (1.0 - l) * s;
            }
        }
        (gx, gy)
    }

    fn hessian(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
        for (&l, (&a, &b)) in self.lambdas.iter().zip(self.a.iter().zip(self.b)) {
            let p = l * x + (1.0 - l) * y;
            let c = a / (p * p) + b / ((1.0 - p) * (1.0 - p));
            hxx -= c * l * l;
            hxy -= c * l * (1.0 - l);
            hyy -= c * (1.0 - l) * (1.0 - l);
        }
        (hxx, hxy, hyy)
    }

    /// Maximiser and whether it is an interior root of the score equations.
    pub(crate) fn solve(&self, x0: f64, y0: f64) -> (f64, f64, bool) {
        if let Some((x, y)) = self.newton(x0, y0) {
            return (x, y, true);
        }
        let (x, y) = self.nested_bisection(y0);
        let interior = x > EDGE && x < 1.0 - EDGE && y > EDGE && y < 1.0 - EDGE;
        (x, y, interior)
    }

    /// Damped Newton kept strictly inside the square; `None` when it heads
    /// for the boundary or the Hessian degenerates.
    fn newton(&self, x0: f64, y0: f64) -> Option<(f64, f64)> {
        let mut x = x0.clamp(1e-6, 1.0 - 1e-6);
        let mut y = y0.clamp(1e-6, 1.0 - 1e-6);
        let mut val = self.value(x, y);
        let scale: f64 = self.a.iter().chain(self.b).sum::<f64>().max(1.0);
        for _ in 0..100 {
            let (gx, gy) = self.gradient(x, y);
            if gx.abs().max(gy.abs()) < 1e-11 * scale {
                return (x > EDGE && x < 1.0 - EDGE && y > EDGE && y < 1.0 - EDGE).then_some((x, y));
            }
            let (hxx, hxy, hyy) = self.hessian(x, y);
            let det = hxx * hyy - hxy * hxy;
            if !(det > 0.0 && hxx < 0.0) || !det.is_finite() {
                return None;
            }
            let dx = -(hyy * gx - hxy * gy) / det;
            let dy = -(hxx * gy - hxy * gx) / det;
            let mut step = 1.0;
            loop {
                let (nx, ny) = (x + step * dx, y + step * dy);
                let inside = nx > 0.0 && nx < 1.0 && ny > 0.0 && ny < 1.0;
                if inside {
                    let nv = self.value(nx, ny);
                    if nv >= val - 1e-14 * val.abs() {
                        x = nx;
                        y = ny;
                        val = nv;
                        break;
                    }
                }
                step *= 0.5;
                if step < 1e-10 {
                    return None;
                }
            }
            if (step * dx).abs().max((step * dy).abs()) < 1e-15 {
                let inside = x > EDGE && x < 1.0 - EDGE && y > EDGE && y < 1.0 - EDGE;
                return inside.then_some((x, y));
            }
        }
        None
    }

    /// Maximises over `y` for fixed `x` by bisection on the score.
    fn best_y(&self, x: f64, fallback: f64) -> f64 {
        if self.lambdas.iter().all(|&l| l == 1.0) {
            return fallback;
        }
        let dy = |y: f64| self.gradient(x, y).1;
        bisect_concave(dy)
    }

    fn nested_bisection(&self, y0: f64) -> (f64, f64) {
        if self.lambdas.iter().all(|&l| l == 0.0) {
            return (0.0, self.best_y(0.0, y0));
        }
        let dx = |x: f64| self.gradient(x, self.best_y(x, y0)).0;
        let x = bisect_concave(dx);
        (x, self.best_y(x, y0))
    }
}

/// Argmax on `[0, 1]` of a concave function given its derivative.
fn bisect_concave(deriv: impl Fn(f64) -> f64) -> f64 {
    if !(deriv(0.0) > 0.0) {
        return 0.0;
    }
    if !(deriv(1.0) < 0.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_sample, RawRow};

    fn brute(problem: &PointProblem) -> (f64, f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let (x, y) = (i as f64 / 400.0, j as f64 / 400.0);
                let v = problem.value(x, y);
                if v > best.0 {
                    best = (v, x, y);
                }
            }
        }
        best
    }

    #[test]
    fn interior_solution_matches_grid() {
        let p = PointProblem {
            lambdas: &[1.0, 0.6, 0.2],
            a: &[3.0, 5.0, 2.0],
            b: &[4.0, 2.0, 6.0],
        };
        let (x, y, interior) = p.solve(0.5, 0.5);
        assert!(interior);
        let (bv, _, _) = brute(&p);
        assert!(p.value(x, y) >= bv - 1e-9);
        let (gx, gy) = p.gradient(x, y);
        assert!(gx.abs() < 1e-8 && gy.abs() < 1e-8);
    }

    #[test]
    fn boundary_solution_is_flagged() {
        // component-1 rows all survive: optimum x = 0
        let p = PointProblem {
            lambdas: &[1.0, 0.0],
            a: &[0.0, 3.0],
            b: &[5.0, 1.0],
        };
        let (x, y, interior) = p.solve(0.4, 0.4);
        assert!(!interior);
        assert_eq!(x, 0.0);
        assert!((y - 0.75).abs() < 1e-9);
    }

    #[test]
    fn labeled_data_gives_proportions() {
        let raw: Vec<RawRow> = [(1.0, 1.0), (3.0, 1.0), (0.5, 0.0), (1.5, 0.0), (4.0, 0.0)]
            .iter()
            .map(|&(t, l)| RawRow::new(t, 1.0, vec![l, 1.0 - l]))
            .collect();
        let s = validate_sample(&raw).unwrap();
        let grid = TimeGrid::new(vec![2.0]).unwrap();
        let rep = binomial_pointwise_em(&s, &grid, &EmConfig::default()).unwrap();
        assert!((rep.curves.value(0, 0) - 0.5).abs() < 1e-9);
        assert!((rep.curves.value(0, 1) - 2.0 / 3.0).abs() < 1e-9);
        assert!(rep.flagged_times.is_empty());
    }
}
