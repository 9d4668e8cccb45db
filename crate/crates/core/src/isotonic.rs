//! Weighted isotonic regression.
//!
//! Minimises `sum_i r_i (y_i - a_i)^2` subject to `a_1 <= ... <= a_n`.
//! [`pava`] is the linear-time pool-adjacent-violators solver used by the
//! estimators; [`maxmin_oracle`] evaluates the closed-form max-min
//! representation directly and is kept as an independent check.

use crate::error::{Error, Result};

/// Responses `y` with strictly positive weights `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicProblem {
    y: Vec<f64>,
    r: Vec<f64>,
}

impl IsotonicProblem {
    pub fn new(y: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidProblem("need at least one response".into()));
        }
        if y.len() != r.len() {
            return Err(Error::InvalidProblem(format!(
                "{} responses but {} weights",
                y.len(),
                r.len()
            )));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(format!("non-finite response {v}")));
        }
        if let Some(w) = r.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidProblem(format!("weight {w} is not positive")));
        }
        Ok(Self { y, r })
    }

    /// Unit weights.
    pub fn unweighted(y: Vec<f64>) -> Result<Self> {
        let r = vec![1.0; y.len()];
        Self::new(y, r)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Clone, Copy)]
struct Block {
    weighted_sum: f64,
    weight: f64,
    len: usize,
    lo: f64,
    hi: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        // Rounding can push the quotient a hair outside the pooled range.
        (self.weighted_sum / self.weight).clamp(self.lo, self.hi)
    }
}

/// Pool-adjacent-violators solution of the weighted isotonic problem.
pub fn pava(problem: &IsotonicProblem) -> Vec<f64> {
    let mut out = Vec::with_capacity(problem.len());
    pava_into(&problem.y, &problem.r, &mut out);
    out
}

/// Same as [`pava`] on raw slices, writing into `out`. Weights must be positive.
pub(crate) fn pava_into(y: &[f64], r: &[f64], out: &mut Vec<f64>) {
    let mut blocks: Vec<Block> = Vec::with_capacity(y.len());
    for (&yi, &ri) in y.iter().zip(r) {
        let mut cur = Block {
            weighted_sum: yi * ri,
            weight: ri,
            len: 1,
            lo: yi,
            hi: yi,
        };
        while let Some(prev) = blocks.last() {
            if prev.mean() < cur.mean() {
                break;
            }
            cur = Block {
                weighted_sum: prev.weighted_sum + cur.weighted_sum,
                weight: prev.weight + cur.weight,
                len: prev.len + cur.len,
                lo: prev.lo.min(cur.lo),
                hi: prev.hi.max(cur.hi),
            };
            blocks.pop();
        }
        blocks.push(cur);
    }
    out.clear();
    for b in &blocks {
        let m = b.mean();
        out.extend(std::iter::repeat_n(m, b.len));
    }
}

/// Direct evaluation of `a_j = max_{s<=j} min_{t>=j} mean_r(y_s..y_t)`.
///
/// Quadratic in memory-free form (cubic in the naive reading); intended for
/// checking [`pava`] on problems up to a few thousand points.
pub fn maxmin_oracle(problem: &IsotonicProblem) -> Vec<f64> {
    let n = problem.len();
    let (y, r) = (&problem.y, &problem.r);
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut min_from = vec![0.0; n];
    for s in 0..n {
        // means[t] for t >= s, accumulated forward from s
        let mut num = 0.0;
        let mut den = 0.0;
        for t in s..n {
            num += y[t] * r[t];
            den += r[t];
            min_from[t] = num / den;
        }
        // suffix minima: min over t >= j of mean(s, t)
        for j in (s..n - 1).rev() {
            if min_from[j + 1] < min_from[j] {
                min_from[j] = min_from[j + 1];
            }
        }
        for j in s..n {
            if min_from[j] > best[j] {
                best[j] = min_from[j];
            }
        }
    }
    best
}
