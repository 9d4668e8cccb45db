use crate::curve::CurveSet;
use crate::error::{Error, Result};

/// Kolmogorov–Smirnov type distance between estimated and hypothesised
/// component CDFs: `sqrt(n) * max_j (|F1^(t_j) - F1(t_j)| + |F2^(t_j) - F2(t_j)|)`.
pub fn ks_gof_statistic<F1, F2>(curves: &CurveSet, f1: F1, f2: F2, n: usize) -> Result<f64>
where
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    if curves.components() != 2 {
        return Err(Error::UnsupportedComponents {
            expected: 2,
            found: curves.components(),
        });
    }
    let worst = curves
        .grid()
        .times()
        .iter()
        .enumerate()
        .map(|(j, &t)| (curves.value(j, 0) - f1(t)).abs() + (curves.value(j, 1) - f2(t)).abs())
        .fold(0.0, f64::max);
    Ok((n as f64).sqrt() * worst)
}
