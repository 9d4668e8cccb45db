//! Right-continuous step functions and per-component CDF estimates on a grid.

use serde::Serialize;

use crate::data::TimeGrid;
use crate::error::{Error, Result};

/// Right-continuous step function: `left` below the first knot, `levels[i]`
/// on `[knots[i], knots[i + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    levels: Vec<f64>,
    left: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, levels: Vec<f64>, left: f64) -> Result<Self> {
        if knots.len() != levels.len() {
            return Err(Error::InvalidCurve(format!(
                "{} knots but {} levels",
                knots.len(),
                levels.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCurve("knots must be strictly increasing".into()));
        }
        Ok(Self { knots, levels, left })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k <= t) {
            0 => self.left,
            i => self.levels[i - 1],
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn left(&self) -> f64 {
        self.left
    }
}

/// Per-component CDF values on a grid: `value(j, k) = F_k(t_j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSet {
    grid: TimeGrid,
    /// Column-major: one vector of length `h` per component.
    columns: Vec<Vec<f64>>,
    constrained: bool,
}

impl CurveSet {
    /// Builds a genuine set of CDFs; every column must be nondecreasing in `[0, 1]`.
    pub fn new(grid: TimeGrid, columns: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(&grid, &columns)?;
        for (k, col) in columns.iter().enumerate() {
            if let Some(v) = col.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidCurve(format!(
                    "component {k} has value {v} outside [0, 1]"
                )));
            }
            if col.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidCurve(format!(
                    "component {k} is not nondecreasing"
                )));
            }
        }
        Ok(Self {
            grid,
            columns,
            constrained: true,
        })
    }

    /// Builds estimates that may leave `[0, 1]` or decrease (NPMLE-type output).
    pub fn unconstrained(grid: TimeGrid, columns: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(&grid, &columns)?;
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCurve("non-finite estimate".into()));
        }
        let constrained = columns.iter().all(|col| {
            col.iter().all(|v| (0.0..=1.0).contains(v)) && col.windows(2).all(|w| w[0] <= w[1])
        });
        Ok(Self {
            grid,
            columns,
            constrained,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.columns[k][j]
    }

    /// False when some column leaves `[0, 1]` or decreases.
    pub fn is_genuine(&self) -> bool {
        self.constrained
    }

    /// Step-function view of one component (value 0 before the first grid point).
    pub fn step(&self, k: usize) -> StepFunction {
        StepFunction {
            knots: self.grid.times().to_vec(),
            levels: self.columns[k].clone(),
            left: 0.0,
        }
    }

    /// Right-continuous evaluation of component `k` at `t`.
    pub fn eval(&self, k: usize, t: f64) -> f64 {
        eval_curve(self, k, t)
    }
}

fn check_shape(grid: &TimeGrid, columns: &[Vec<f64>]) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::InvalidCurve("no components".into()));
    }
    if let Some(col) = columns.iter().find(|c| c.len() != grid.len()) {
        return Err(Error::InvalidCurve(format!(
            "column of length {} on grid of length {}",
            col.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// Right-continuous step evaluation: 0 before `t_1`, the last value from `t_h` on.
pub fn eval_curve(curve: &CurveSet, component: usize, t: f64) -> f64 {
    match curve.grid.count_le(t) {
        0 => 0.0,
        j => curve.columns[component][j - 1],
    }
}
