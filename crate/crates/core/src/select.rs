//! Modified BIC and the (K, lambda, gamma) grid search.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{FitOptions, FitResult};
use crate::error::{MoggeError, Result};
use crate::lasso::{fit_em_lasso, fit_em_lasso_from, PenaltyConfig};
use crate::model::{check_penalized_config, joint_loglik, CovarianceKind, DataSet, MoggeParams};

/// Degrees of freedom of a univariate-response, diagonal-gating model:
/// `(K - 1)` mixing weights, nonzero gating means, `K * p` gating variances,
/// nonzero expert coefficients, `K` intercepts and `K` expert variances.
pub fn count_df(params: &MoggeParams) -> Result<usize> {
    check_penalized_config(params)?;
    let k = params.k();
    let p = params.p();
    let nonzero_mu: usize = params.gating.iter().map(|g| g.mean.iter().filter(|&&v| v != 0.0).count()).sum();
    let nonzero_beta: usize =
        params.experts.iter().map(|e| e.coeffs.iter().filter(|&&v| v != 0.0).count()).sum();
    Ok((k - 1) + nonzero_mu + k * p + nonzero_beta + k + k)
}

/// `loglik - df * ln(n) / 2`.
pub fn bic_value(loglik: f64, df: usize, n: usize) -> f64 {
    loglik - df as f64 * (n as f64).ln() / 2.0
}

/// Modified BIC with the unpenalized joint log-likelihood at the fitted parameters.
pub fn modified_bic(data: &DataSet, fit: &FitResult) -> Result<f64> {
    let loglik = joint_loglik(data, &fit.params)?;
    Ok(bic_value(loglik, count_df(&fit.params)?, data.n()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl GridSpec {
    pub fn new(ks: Vec<usize>, lambdas: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        let grid = Self { ks, lambdas, gammas };
        grid.validate()?;
        Ok(grid)
    }

    /// K = 2 with lambda, gamma in {0, 1, ..., 25}.
    pub fn reference() -> Self {
        let values: Vec<f64> = (0..=25).map(f64::from).collect();
        Self { ks: vec![2], lambdas: values.clone(), gammas: values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.lambdas.is_empty() || self.gammas.is_empty() {
            return Err(MoggeError::InvalidArgument("grid lists must be non-empty".into()));
        }
        if self.ks.contains(&0) {
            return Err(MoggeError::InvalidArgument("K values must be positive".into()));
        }
        if self.lambdas.iter().chain(&self.gammas).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MoggeError::InvalidArgument("penalties must be finite and non-negative".into()));
        }
        let mut ks = self.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        let has_dup = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.windows(2).any(|w| w[0] == w[1])
        };
        if ks.len() != self.ks.len() || has_dup(&self.lambdas) || has_dup(&self.gammas) {
            return Err(MoggeError::InvalidArgument("grid lists must not contain duplicates".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub fit: FitOptions,
    pub ca_max_iter: usize,
    pub ca_tol: f64,
    /// Chain each K's fits along decreasing penalties.
    pub warm_start: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        let ca = PenaltyConfig::default();
        Self { fit: FitOptions::diagonal(), ca_max_iter: ca.ca_max_iter, ca_tol: ca.ca_tol, warm_start: true }
    }
}

impl SearchOptions {
    pub fn penalty(&self, lambda: f64, gamma: f64) -> PenaltyConfig {
        PenaltyConfig { lambda, gamma, ca_max_iter: self.ca_max_iter, ca_tol: self.ca_tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub loglik: f64,
    pub df: usize,
    pub bic: f64,
    pub converged: bool,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTable {
    /// Sorted by K, then lambda, then gamma.
    pub rows: Vec<SelectionRow>,
    pub selected: usize,
}

impl SelectionTable {
    pub fn best(&self) -> &SelectionRow {
        &self.rows[self.selected]
    }
}

/// Ordering used for selection: higher BIC, then smaller df, smaller K,
/// larger lambda + gamma.
fn preference(a: &SelectionRow, b: &SelectionRow) -> Ordering {
    a.bic
        .total_cmp(&b.bic)
        .then_with(|| b.df.cmp(&a.df))
        .then_with(|| b.k.cmp(&a.k))
        .then_with(|| (a.lambda + a.gamma).total_cmp(&(b.lambda + b.gamma)))
}

/// Index of the preferred converged row, if any.
pub fn select_row(rows: &[SelectionRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.converged && r.bic.is_finite())
        .max_by(|(_, a), (_, b)| preference(a, b))
        .map(|(i, _)| i)
}

fn row_from_fit(data: &DataSet, k: usize, lambda: f64, gamma: f64, fit: Result<FitResult>) -> SelectionRow {
    let scored = fit.and_then(|fit| {
        let loglik = joint_loglik(data, &fit.params)?;
        let df = count_df(&fit.params)?;
        Ok((fit, loglik, df))
    });
    match scored {
        Ok((fit, loglik, df)) => SelectionRow {
            k,
            lambda,
            gamma,
            loglik,
            df,
            bic: bic_value(loglik, df, data.n()),
            converged: fit.converged,
            fit: Some(fit),
            error: None,
        },
        Err(e) => SelectionRow {
            k,
            lambda,
            gamma,
            loglik: f64::NAN,
            df: 0,
            bic: f64::NAN,
            converged: false,
            fit: None,
            error: Some(e.to_string()),
        },
    }
}

/// Penalty pairs in decreasing lambda, then decreasing gamma.
fn chain_order(grid: &GridSpec) -> Vec<(f64, f64)> {
    let mut lambdas = grid.lambdas.clone();
    let mut gammas = grid.gammas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    gammas.sort_by(|a, b| b.total_cmp(a));
    lambdas.iter().flat_map(|&l| gammas.iter().map(move |&g| (l, g))).collect()
}

/// Fits at `penalty` from the cold multi-start and, when given, from
/// `warm`; keeps the higher penalized objective (the warm fit on ties).
pub fn fit_warm_or_cold(
    data: &DataSet,
    k: usize,
    penalty: &PenaltyConfig,
    warm: Option<&MoggeParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let cold = fit_em_lasso(data, k, penalty, opts);
    let Some(init) = warm else { return cold };
    match (fit_em_lasso_from(data, init.clone(), penalty, opts), cold) {
        (Ok(w), Ok(c)) => Ok(if c.objective > w.objective { c } else { w }),
        (Ok(w), Err(_)) => Ok(w),
        (Err(_), c) => c,
    }
}

fn search_k(data: &DataSet, k: usize, grid: &GridSpec, search: &SearchOptions) -> Vec<SelectionRow> {
    let mut rows = Vec::new();
    let mut previous: Option<MoggeParams> = None;
    for (lambda, gamma) in chain_order(grid) {
        let penalty = search.penalty(lambda, gamma);
        let fit = match previous.as_ref().filter(|_| search.warm_start) {
            Some(init) => fit_em_lasso_from(data, init.clone(), &penalty, &search.fit)
                .or_else(|_| fit_em_lasso(data, k, &penalty, &search.fit)),
            None => fit_em_lasso(data, k, &penalty, &search.fit),
        };
        let row = row_from_fit(data, k, lambda, gamma, fit);
        if let Some(fit) = &row.fit {
            previous = Some(fit.params.clone());
        }
        rows.push(row);
    }
    rows
}

/// Fits every grid triplet; rows are sorted by K, then lambda, then gamma.
/// Failed fits appear as unconverged rows carrying their error.
pub fn grid_rows(data: &DataSet, grid: &GridSpec, search: &SearchOptions) -> Result<Vec<SelectionRow>> {
    grid.validate()?;
    if search.fit.gating_cov != CovarianceKind::Diagonal {
        return Err(MoggeError::Unsupported("grid search fits diagonal gating covariances only".into()));
    }
    let mut rows: Vec<SelectionRow> =
        grid.ks.par_iter().flat_map_iter(|&k| search_k(data, k, grid, search)).collect();
    rows.sort_by(|a, b| {
        a.k.cmp(&b.k).then_with(|| a.lambda.total_cmp(&b.lambda)).then_with(|| a.gamma.total_cmp(&b.gamma))
    });
    Ok(rows)
}

/// Fits every grid triplet and selects the highest modified BIC.
pub fn grid_search(data: &DataSet, grid: &GridSpec, search: &SearchOptions) -> Result<SelectionTable> {
    let rows = grid_rows(data, grid, search)?;
    let selected = select_row(&rows).ok_or_else(|| MoggeError::Selection(rows.len()))?;
    Ok(SelectionTable { rows, selected })
}
