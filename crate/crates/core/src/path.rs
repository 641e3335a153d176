//! Lasso paths: penalized estimates along a decreasing penalty sequence.
//! Each point keeps the better of a warm start from the previous point and
//! a cold multi-start.

use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{MoggeError, Result};
use crate::lasso::fit_em_lasso;
use crate::model::{DataSet, MoggeParams};
use crate::select::{fit_warm_or_cold, SearchOptions};

const MAX_DOUBLINGS: usize = 40;

/// Which parameter blocks the path penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathBlocks {
    Gate,
    Expert,
    #[default]
    Both,
}

impl PathBlocks {
    /// `(lambda, gamma)` for a path value.
    pub fn penalties(self, value: f64) -> (f64, f64) {
        match self {
            PathBlocks::Gate => (0.0, value),
            PathBlocks::Expert => (value, 0.0),
            PathBlocks::Both => (value, value),
        }
    }

    /// True when every penalized coefficient of `params` is exactly zero.
    pub fn fully_shrunk(self, params: &MoggeParams) -> bool {
        let gates = || params.gating.iter().all(|g| g.mean.iter().all(|&v| v == 0.0));
        let experts = || params.experts.iter().all(|e| e.coeffs.iter().all(|&v| v == 0.0));
        match self {
            PathBlocks::Gate => gates(),
            PathBlocks::Expert => experts(),
            PathBlocks::Both => gates() && experts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub value: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub fit: FitResult,
}

/// One CSV row of a path: a single estimated coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub lambda: f64,
    pub gamma: f64,
    /// 1-based component index.
    pub component: usize,
    /// `gate` (gating mean) or `expert` (regression coefficient).
    pub block: String,
    /// 1-based coordinate index.
    pub coordinate: usize,
    pub estimate: f64,
}

/// Fits the path at `values`, visited from largest to smallest.
pub fn lasso_path(
    data: &DataSet,
    k: usize,
    values: &[f64],
    blocks: PathBlocks,
    search: &SearchOptions,
) -> Result<Vec<PathPoint>> {
    if values.is_empty() {
        return Err(MoggeError::InvalidArgument("empty penalty sequence".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MoggeError::InvalidArgument("path penalties must be finite and non-negative".into()));
    }
    let mut ordered = values.to_vec();
    ordered.sort_by(|a, b| b.total_cmp(a));
    ordered.dedup();

    let mut points: Vec<PathPoint> = Vec::with_capacity(ordered.len());
    for value in ordered {
        let (lambda, gamma) = blocks.penalties(value);
        let penalty = search.penalty(lambda, gamma);
        let warm = points.last().filter(|_| search.warm_start).map(|p| &p.fit.params);
        let fit = fit_warm_or_cold(data, k, &penalty, warm, &search.fit)?;
        points.push(PathPoint { value, lambda, gamma, fit });
    }
    Ok(points)
}

/// Starting guess for the smallest penalty that zeroes every penalized
/// coefficient, from single-component statistics.
fn null_penalty_guess(data: &DataSet, blocks: PathBlocks) -> Result<f64> {
    let x = data.x();
    let y = data.y_vec()?;
    let n = data.n() as f64;
    let y_mean = y.mean();
    let y_var = (y.map(|v| (v - y_mean).powi(2)).sum() / n).max(1e-12);
    let mut gamma: f64 = 0.0;
    let mut lambda: f64 = 0.0;
    for j in 0..data.p() {
        let col = x.column(j);
        let mean = col.mean();
        let var = (col.map(|v| (v - mean).powi(2)).sum() / n).max(1e-12);
        gamma = gamma.max(col.sum().abs() / var);
        let cross: f64 = col.iter().zip(y.iter()).map(|(a, b)| a * (b - y_mean)).sum();
        lambda = lambda.max(cross.abs() / y_var);
    }
    let guess = match blocks {
        PathBlocks::Gate => gamma,
        PathBlocks::Expert => lambda,
        PathBlocks::Both => gamma.max(lambda),
    };
    Ok(guess.max(1.0))
}

/// A penalty at which the fitted model has every penalized block exactly
/// zero, found by doubling from a data-driven guess.
pub fn full_shrinkage_penalty(data: &DataSet, k: usize, blocks: PathBlocks, search: &SearchOptions) -> Result<f64> {
    let mut value = null_penalty_guess(data, blocks)?;
    for _ in 0..MAX_DOUBLINGS {
        let (lambda, gamma) = blocks.penalties(value);
        let fit = fit_em_lasso(data, k, &search.penalty(lambda, gamma), &search.fit)?;
        if blocks.fully_shrunk(&fit.params) {
            return Ok(value);
        }
        value *= 2.0;
    }
    Err(MoggeError::Numerical(format!(
        "no full-shrinkage penalty found below {value:e}"
    )))
}

/// Flattens path points into per-coefficient rows.
pub fn path_rows(points: &[PathPoint]) -> Vec<PathRow> {
    let mut rows = Vec::new();
    for point in points {
        let params = &point.fit.params;
        for (k, g) in params.gating.iter().enumerate() {
            for (j, &v) in g.mean.iter().enumerate() {
                rows.push(PathRow {
                    lambda: point.lambda,
                    gamma: point.gamma,
                    component: k + 1,
                    block: "gate".into(),
                    coordinate: j + 1,
                    estimate: v,
                });
            }
        }
        for (k, e) in params.experts.iter().enumerate() {
            for (j, &v) in e.coeffs.column(0).iter().enumerate() {
                rows.push(PathRow {
                    lambda: point.lambda,
                    gamma: point.gamma,
                    component: k + 1,
                    block: "expert".into(),
                    coordinate: j + 1,
                    estimate: v,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_penalties() {
        assert_eq!(PathBlocks::Gate.penalties(3.0), (0.0, 3.0));
        assert_eq!(PathBlocks::Expert.penalties(3.0), (3.0, 0.0));
        assert_eq!(PathBlocks::Both.penalties(3.0), (3.0, 3.0));
    }
}
