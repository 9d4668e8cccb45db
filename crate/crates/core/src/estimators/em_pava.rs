use crate::curve::CurveSet;
use crate::data::{MixtureSample, TimeGrid};
use crate::error::Result;
use crate::isotonic::pava_into;
use crate::survival::{kaplan_meier, km_to_cdf};

use super::estep::{posterior, Design, Sums};
use super::{EmConfig, EmSummary, EstimateReport, Init, Method};

/// EM with a weighted isotonic M-step for two-component mixture data.
pub fn em_pava(sample: &MixtureSample, grid: &TimeGrid, config: &EmConfig) -> Result<EstimateReport> {
    em_pava_observed(sample, grid, config, |_, _| {})
}

/// [`em_pava`] calling `observer(iteration, curves)` on the initial curves
/// (iteration 0) and after every M-step.
pub fn em_pava_observed<O>(
    sample: &MixtureSample,
    grid: &TimeGrid,
    config: &EmConfig,
    mut observer: O,
) -> Result<EstimateReport>
where
    O: FnMut(usize, &[Vec<f64>]),
{
    config.validate()?;
    sample.require_two_components(true)?;
    let design = Design::new(sample, grid, config.clamp_epsilon);
    let mut f = initial_curves(sample, grid, config.init, 2)?;
    design.apply_tails(&mut f);
    observer(0, &f);

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut scratch = Scratch::default();
    while iterations < config.max_iterations {
        let sums = design.sums(&f)?;
        trace.push(design.objective(&f, &sums));
        let mut next = m_step(&design, &f, &sums, &mut scratch);
        design.apply_tails(&mut next);
        let change = sup_change(&f, &next);
        f = next;
        iterations += 1;
        observer(iterations, &f);
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
    Ok(EstimateReport {
        method: Method::EmPava,
        curves: CurveSet::new(grid.clone(), f)?,
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

#[derive(Default)]
struct Scratch {
    y: Vec<f64>,
    r: Vec<f64>,
    idx: Vec<usize>,
    fit: Vec<f64>,
}

fn m_step(design: &Design, f: &[Vec<f64>], sums: &Sums, s: &mut Scratch) -> Vec<Vec<f64>> {
    let h = design.h;
    let mut num = [vec![0.0; h], vec![0.0; h]];
    let mut den = [vec![0.0; h], vec![0.0; h]];
    for (g, &l) in design.lambdas.iter().enumerate() {
        for j in 0..h {
            let (a, b) = (sums.a[g * h + j], sums.b[g * h + j]);
            let u = posterior(l, f[0][j], f[1][j]);
            let v = posterior(l, 1.0 - f[0][j], 1.0 - f[1][j]);
            num[0][j] += u * a;
            den[0][j] += u * a + v * b;
            num[1][j] += (1.0 - u) * a;
            den[1][j] += (1.0 - u) * a + (1.0 - v) * b;
        }
    }
    (0..2)
        .map(|k| isotonic_with_gaps(&num[k], &den[k], s))
        .collect()
}

/// Isotonic fit of `num / den` with weights `den`; points with zero weight
/// carry the fitted value on their left (0 before the first weighted point).
fn isotonic_with_gaps(num: &[f64], den: &[f64], s: &mut Scratch) -> Vec<f64> {
    s.idx.clear();
    s.y.clear();
    s.r.clear();
    for (j, (&n, &d)) in num.iter().zip(den).enumerate() {
        if d > 0.0 && d.is_finite() {
            s.idx.push(j);
            s.y.push((n / d).clamp(0.0, 1.0));
            s.r.push(d);
        }
    }
    let mut out = vec![0.0; num.len()];
    if s.idx.is_empty() {
        return out;
    }
    pava_into(&s.y, &s.r, &mut s.fit);
    let mut next = 0;
    let mut current = 0.0;
    for (j, slot) in out.iter_mut().enumerate() {
        if next < s.idx.len() && s.idx[next] == j {
            current = s.fit[next].clamp(0.0, 1.0);
            next += 1;
        }
        *slot = current;
    }
    out
}

pub(crate) fn sup_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Starting curves, identical for every component.
pub(crate) fn initial_curves(
    sample: &MixtureSample,
    grid: &TimeGrid,
    init: Init,
    components: usize,
) -> Result<Vec<Vec<f64>>> {
    let col = match init {
        Init::PooledKm => {
            let km = kaplan_meier(&sample.times(), &sample.events(), None)?;
            km_to_cdf(&km, grid)
        }
        Init::UniformLinear => {
            let h = grid.len() as f64;
            (1..=grid.len()).map(|j| j as f64 / (h + 1.0)).collect()
        }
    };
    Ok(vec![col; components])
}
