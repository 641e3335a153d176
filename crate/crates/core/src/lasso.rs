//! EM-Lasso: l1-penalized EM for univariate-response models with diagonal
//! gating covariances.
//!
//! The penalized objective is
//!
//! ```text
//! L(psi) - lambda * sum_k ||beta_k||_1 - gamma * sum_k ||mu_k||_1
//! ```
//!
//! Each M-step keeps the mixing-weight update of plain EM and replaces the
//! mean and coefficient updates with cyclic coordinate ascent. Thresholds use
//! the variances of the previous iterate; intercepts and variances are
//! refreshed after the coordinate loops.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::em::{ascend, best_of_starts, checked_counts, init_params_with, normalize_alphas, stream_rng, FitOptions, FitResult};
use crate::error::{MoggeError, Result};
use crate::model::{
    penalty_value, Covariance, CovarianceKind, DataSet, ExpertComponent, GatingComponent, MoggeParams,
    Responsibilities, VARIANCE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Penalty on expert coefficients.
    pub lambda: f64,
    /// Penalty on gating means.
    pub gamma: f64,
    pub ca_max_iter: usize,
    pub ca_tol: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { lambda: 0.0, gamma: 0.0, ca_max_iter: 100, ca_tol: 1e-7 }
    }
}

impl PenaltyConfig {
    pub fn new(lambda: f64, gamma: f64) -> Self {
        Self { lambda, gamma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) || !self.lambda.is_finite() || !self.gamma.is_finite() {
            return Err(MoggeError::InvalidArgument(format!(
                "penalties must be finite and non-negative, got lambda = {}, gamma = {}",
                self.lambda, self.gamma
            )));
        }
        if self.ca_max_iter == 0 || !(self.ca_tol > 0.0) {
            return Err(MoggeError::InvalidArgument(
                "coordinate ascent needs ca_max_iter >= 1 and ca_tol > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `sign(u) * max(|u| - eta, 0)`; zeroed values are returned as `+0.0`.
pub fn soft_threshold(u: f64, eta: f64) -> f64 {
    let shrunk = u.abs() - eta;
    if shrunk > 0.0 {
        u.signum() * shrunk
    } else {
        0.0
    }
}

fn diagonal_variances(gating: &[GatingComponent]) -> Result<Vec<&DVector<f64>>> {
    gating
        .iter()
        .map(|g| {
            g.cov.diagonal().ok_or_else(|| {
                MoggeError::Unsupported("penalized estimation requires diagonal gating covariances".into())
            })
        })
        .collect()
}

/// Coordinate-ascent update of the gating means.
///
/// Starting from the previous means, coordinate `j` of component `k` becomes
/// `S(X_j^T tau_k; gamma * nu2_kj) / 1^T tau_k` with `nu2` lagged. The
/// coordinates are decoupled under a diagonal covariance, so the second sweep
/// already finds no change.
pub fn ca_update_gating_means(
    data: &DataSet,
    tau: &Responsibilities,
    previous: &[GatingComponent],
    penalty: &PenaltyConfig,
) -> Result<Vec<DVector<f64>>> {
    let counts = checked_counts(tau)?;
    let variances = diagonal_variances(previous)?;
    let x = data.x();
    let p = data.p();
    let gamma = penalty.gamma;
    let mut means = Vec::with_capacity(counts.len());
    for (k, &n_k) in counts.iter().enumerate() {
        let w = tau.tau.column(k);
        let wx = x.tr_mul(&w);
        let nu2 = variances[k];
        // Gating Q-function up to constants, with nu2 held fixed.
        let objective = |mu: &DVector<f64>| -> f64 {
            (0..p)
                .map(|j| {
                    let ss: f64 = (0..x.nrows()).map(|i| w[i] * (x[(i, j)] - mu[j]).powi(2)).sum();
                    -0.5 * ss / nu2[j] - gamma * mu[j].abs()
                })
                .sum()
        };
        let mut mu = previous[k].mean.clone();
        let mut current = objective(&mu);
        for _ in 0..penalty.ca_max_iter {
            for j in 0..p {
                mu[j] = soft_threshold(wx[j], gamma * nu2[j]) / n_k;
            }
            let next = objective(&mu);
            let delta = (next - current).abs();
            current = next;
            if delta < penalty.ca_tol {
                break;
            }
        }
        means.push(mu);
    }
    Ok(means)
}

/// `nu2_kj = sum_i tau_ik (x_ij - mu_kj)^2 / n_k`, floored.
pub fn update_gating_variances(
    data: &DataSet,
    tau: &Responsibilities,
    means: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let counts = checked_counts(tau)?;
    let x = data.x();
    Ok(counts
        .iter()
        .zip(means)
        .enumerate()
        .map(|(k, (&n_k, mu))| {
            let w = tau.tau.column(k);
            DVector::from_fn(data.p(), |j, _| {
                let ss: f64 = (0..x.nrows()).map(|i| w[i] * (x[(i, j)] - mu[j]).powi(2)).sum();
                (ss / n_k).max(VARIANCE_FLOOR)
            })
        })
        .collect())
}

fn check_weights(data: &DataSet, weights: &DVector<f64>) -> Result<f64> {
    if weights.len() != data.n() {
        return Err(MoggeError::Dimension(format!(
            "{} weights for {} observations",
            weights.len(),
            data.n()
        )));
    }
    let n_k = weights.sum();
    if !(n_k > crate::em::DEGENERATE_FRACTION * data.n() as f64) {
        return Err(MoggeError::DegenerateComponent { k: 0, n_k });
    }
    Ok(n_k)
}

/// Penalized expert Q-function in `beta`, up to constants, for a fixed
/// intercept and variance.
pub fn expert_objective(
    data: &DataSet,
    weights: &DVector<f64>,
    intercept: f64,
    variance: f64,
    beta: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let x = data.x();
    let y = data.y();
    let fitted = x * beta;
    let ss: f64 = (0..x.nrows()).map(|i| weights[i] * (y[(i, 0)] - intercept - fitted[i]).powi(2)).sum();
    -0.5 * ss / variance - lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Weighted-lasso coordinate ascent for one expert's coefficients.
///
/// Cycles `beta_j <- S(X_j^T W r_j; lambda * sigma2) / (X_j^T W X_j)` where
/// `r_j` is the partial residual excluding coordinate `j`; the intercept and
/// `sigma2` stay at `previous`'s values throughout.
pub fn ca_update_expert_coeffs(
    data: &DataSet,
    weights: &DVector<f64>,
    previous: &ExpertComponent,
    penalty: &PenaltyConfig,
) -> Result<DVector<f64>> {
    if data.d() != 1 || previous.intercept.len() != 1 {
        return Err(MoggeError::Unsupported("coefficient updates require a univariate response".into()));
    }
    check_weights(data, weights)?;
    let x = data.x();
    let y = data.y();
    let n = data.n();
    let p = data.p();
    let intercept = previous.intercept0();
    let variance = previous.variance();
    let threshold = penalty.lambda * variance;

    let col_norms: Vec<f64> = (0..p).map(|j| (0..n).map(|i| weights[i] * x[(i, j)].powi(2)).sum()).collect();
    let mut beta = previous.beta();
    let fitted = x * &beta;
    let mut resid = DVector::from_fn(n, |i, _| y[(i, 0)] - intercept - fitted[i]);
    let mut current = expert_objective(data, weights, intercept, variance, &beta, penalty.lambda);

    for _ in 0..penalty.ca_max_iter {
        for j in 0..p {
            let old = beta[j];
            let new = if col_norms[j] > 0.0 {
                let rho: f64 = (0..n).map(|i| weights[i] * x[(i, j)] * resid[i]).sum::<f64>() + old * col_norms[j];
                soft_threshold(rho, threshold) / col_norms[j]
            } else {
                0.0
            };
            if new != old {
                let step = new - old;
                for i in 0..n {
                    resid[i] -= step * x[(i, j)];
                }
                beta[j] = new;
            }
        }
        let next = expert_objective(data, weights, intercept, variance, &beta, penalty.lambda);
        let delta = (next - current).abs();
        current = next;
        if delta < penalty.ca_tol {
            break;
        }
    }
    Ok(beta)
}

/// Intercept and variance given the new coefficients.
pub fn update_expert_intercept_variance(
    data: &DataSet,
    weights: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<(f64, f64)> {
    if data.d() != 1 {
        return Err(MoggeError::Unsupported("intercept updates require a univariate response".into()));
    }
    let n_k = check_weights(data, weights)?;
    let y = data.y();
    let fitted = data.x() * beta;
    let n = data.n();
    let intercept = (0..n).map(|i| weights[i] * (y[(i, 0)] - fitted[i])).sum::<f64>() / n_k;
    let ss: f64 = (0..n).map(|i| weights[i] * (y[(i, 0)] - intercept - fitted[i]).powi(2)).sum();
    Ok((intercept, (ss / n_k).max(VARIANCE_FLOOR)))
}

/// One full EM-Lasso M-step.
pub fn lasso_m_step(
    data: &DataSet,
    tau: &Responsibilities,
    previous: &MoggeParams,
    penalty: &PenaltyConfig,
) -> Result<MoggeParams> {
    let counts = checked_counts(tau)?;
    let n = data.n() as f64;
    let means = ca_update_gating_means(data, tau, &previous.gating, penalty)?;
    let variances = update_gating_variances(data, tau, &means)?;
    let mut gating: Vec<GatingComponent> = counts
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((&n_k, mean), nu2)| GatingComponent { alpha: n_k / n, mean, cov: Covariance::Diagonal(nu2) })
        .collect();
    normalize_alphas(&mut gating);

    let mut experts = Vec::with_capacity(counts.len());
    for (k, prev) in previous.experts.iter().enumerate() {
        let weights = tau.tau.column(k).into_owned();
        let beta = ca_update_expert_coeffs(data, &weights, prev, penalty)
            .map_err(|e| relabel_degenerate(e, k))?;
        let (intercept, variance) =
            update_expert_intercept_variance(data, &weights, &beta).map_err(|e| relabel_degenerate(e, k))?;
        experts.push(ExpertComponent::univariate(intercept, beta, variance));
    }
    MoggeParams::new(gating, experts)
}

fn relabel_degenerate(err: MoggeError, k: usize) -> MoggeError {
    match err {
        MoggeError::DegenerateComponent { n_k, .. } => MoggeError::DegenerateComponent { k: k + 1, n_k },
        other => other,
    }
}

fn check_lasso_setup(data: &DataSet, penalty: &PenaltyConfig, opts: &FitOptions) -> Result<()> {
    penalty.validate()?;
    opts.validate()?;
    if data.d() != 1 {
        return Err(MoggeError::Unsupported(format!(
            "penalized estimation requires a univariate response, got d = {}",
            data.d()
        )));
    }
    if opts.gating_cov != CovarianceKind::Diagonal {
        return Err(MoggeError::Unsupported(
            "penalized estimation requires diagonal gating covariances".into(),
        ));
    }
    Ok(())
}

/// One EM-Lasso run from the given parameters.
pub fn fit_em_lasso_from(
    data: &DataSet,
    init: MoggeParams,
    penalty: &PenaltyConfig,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_lasso_setup(data, penalty, opts)?;
    init.check_data(data)?;
    crate::model::check_penalized_config(&init)?;
    let (lambda, gamma) = (penalty.lambda, penalty.gamma);
    ascend(
        data,
        init,
        opts.max_iter,
        opts.tol,
        |params| penalty_value(params, lambda, gamma),
        |tau, prev| lasso_m_step(data, tau, prev, penalty),
    )
}

/// Multi-start EM-Lasso.
pub fn fit_em_lasso(data: &DataSet, k: usize, penalty: &PenaltyConfig, opts: &FitOptions) -> Result<FitResult> {
    check_lasso_setup(data, penalty, opts)?;
    best_of_starts(opts.n_starts, |start| {
        let mut rng = stream_rng(opts.seed, start as u64);
        let init = init_params_with(data, k, opts.init_strategy, CovarianceKind::Diagonal, &mut rng)?;
        fit_em_lasso_from(data, init, penalty, opts)
    })
}
