//! Maximum-likelihood EM with closed-form M-steps.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MoggeError, Result};
use crate::model::{
    e_step, Covariance, CovarianceKind, DataSet, ExpertComponent, GatingComponent, MoggeParams,
    Responsibilities, VARIANCE_FLOOR,
};

/// Ridge added to weighted normal equations.
pub const RIDGE: f64 = 1e-8;
/// Jitter added to gating covariances in the M-step.
pub const COV_JITTER: f64 = 1e-10;
/// Regularization of initial gating covariances.
pub const INIT_COV_REG: f64 = 1e-6;
/// A component is degenerate when `n_k <= DEGENERATE_FRACTION * n`.
pub const DEGENERATE_FRACTION: f64 = 1e-8;

const MAX_INIT_ATTEMPTS: usize = 100;
const KMEANS_MAX_ITER: usize = 100;

/// How starting partitions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    RandomPartition,
    #[default]
    KmeansOnX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative objective change below which a run has converged.
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    pub gating_cov: CovarianceKind,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-6,
            n_starts: 10,
            seed: 0,
            init_strategy: InitStrategy::KmeansOnX,
            gating_cov: CovarianceKind::Full,
        }
    }
}

impl FitOptions {
    pub fn diagonal() -> Self {
        Self { gating_cov: CovarianceKind::Diagonal, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(MoggeError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(MoggeError::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.n_starts == 0 {
            return Err(MoggeError::InvalidArgument("n_starts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: MoggeParams,
    /// Objective after each E-step; the last entry belongs to `params`.
    pub loglik_trace: Vec<f64>,
    pub responsibilities: Responsibilities,
    pub n_iter: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Independent RNG stream for start `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Builds starting parameters from a random hard partition of the data.
pub fn init_params(
    data: &DataSet,
    k: usize,
    strategy: InitStrategy,
    gating_cov: CovarianceKind,
    seed: u64,
) -> Result<MoggeParams> {
    init_params_with(data, k, strategy, gating_cov, &mut stream_rng(seed, 0))
}

pub(crate) fn init_params_with(
    data: &DataSet,
    k: usize,
    strategy: InitStrategy,
    gating_cov: CovarianceKind,
    rng: &mut ChaCha8Rng,
) -> Result<MoggeParams> {
    if k == 0 {
        return Err(MoggeError::InvalidArgument("K must be at least 1".into()));
    }
    if k > data.n() {
        return Err(MoggeError::InvalidArgument(format!(
            "K = {k} exceeds the number of observations n = {}",
            data.n()
        )));
    }
    for _ in 0..MAX_INIT_ATTEMPTS {
        let labels = match strategy {
            InitStrategy::RandomPartition => random_partition(data.n(), k, rng),
            InitStrategy::KmeansOnX => kmeans(data.x(), k, rng),
        };
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        if sizes.iter().all(|&s| s > 0) {
            return params_from_partition(data, &labels, k, gating_cov);
        }
    }
    Err(MoggeError::Numerical(format!(
        "could not draw a partition without empty groups in {MAX_INIT_ATTEMPTS} attempts"
    )))
}

/// One observation per group guaranteed, the rest uniform.
fn random_partition(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = if pos < k { pos } else { rng.random_range(0..k) };
    }
    labels
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    (0..x.ncols()).map(|j| (x[(i, j)] - c[j]).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; may return empty clusters.
fn kmeans(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.nrows();
    let row = |i: usize| x.row(i).transpose();
    let mut centers: Vec<DVector<f64>> = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x, i, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(x, i, &centers[c])))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(x.ncols()); k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += x.row(i).transpose();
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            }
        }
    }
    labels
}

fn params_from_partition(
    data: &DataSet,
    labels: &[usize],
    k: usize,
    gating_cov: CovarianceKind,
) -> Result<MoggeParams> {
    let n = data.n();
    let p = data.p();
    let mut gating = Vec::with_capacity(k);
    let mut experts = Vec::with_capacity(k);
    for c in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let m = rows.len() as f64;
        let xs = data.x().select_rows(&rows);
        let ys = data.y().select_rows(&rows);

        let mean = DVector::from_fn(p, |j, _| xs.column(j).sum() / m);
        let centered = DMatrix::from_fn(rows.len(), p, |i, j| xs[(i, j)] - mean[j]);
        let cov = match gating_cov {
            CovarianceKind::Full => Covariance::Full(
                centered.tr_mul(&centered) / m + DMatrix::identity(p, p) * INIT_COV_REG,
            ),
            CovarianceKind::Diagonal => Covariance::Diagonal(DVector::from_fn(p, |j, _| {
                centered.column(j).norm_squared() / m + INIT_COV_REG
            })),
        };
        gating.push(GatingComponent { alpha: m / n as f64, mean, cov });

        // Least squares on [1, x] with a small ridge.
        let design = DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { xs[(i, j - 1)] });
        let gram = design.tr_mul(&design) + DMatrix::identity(p + 1, p + 1) * RIDGE;
        let chol = Cholesky::new(gram)
            .ok_or_else(|| MoggeError::Numerical(format!("singular design for initial group {}", c + 1)))?;
        let theta = chol.solve(&design.tr_mul(&ys));
        let resid = &ys - &design * &theta;
        let intercept = theta.row(0).transpose();
        let coeffs = theta.rows(1, p).into_owned();
        let cov = floor_cov(resid.tr_mul(&resid) / m);
        experts.push(ExpertComponent { intercept, coeffs, cov });
    }
    normalize_alphas(&mut gating);
    MoggeParams::new(gating, experts)
}

/// Floors a d x d residual covariance: `max(s, floor)` for d = 1, `+ floor * I` otherwise.
pub(crate) fn floor_cov(cov: DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 1 {
        DMatrix::from_element(1, 1, cov[(0, 0)].max(VARIANCE_FLOOR))
    } else {
        let d = cov.nrows();
        let sym = (&cov + cov.transpose()) * 0.5;
        sym + DMatrix::identity(d, d) * VARIANCE_FLOOR
    }
}

/// Guards the sum-to-one invariant against accumulated rounding.
pub(crate) fn normalize_alphas(gating: &mut [GatingComponent]) {
    let total: f64 = gating.iter().map(|g| g.alpha).sum();
    for g in gating.iter_mut() {
        g.alpha /= total;
    }
}

/// Column sums of `tau`, failing on the first degenerate component.
pub(crate) fn checked_counts(tau: &Responsibilities) -> Result<Vec<f64>> {
    let threshold = DEGENERATE_FRACTION * tau.n() as f64;
    let counts = tau.counts();
    for (k, &n_k) in counts.iter().enumerate() {
        if !(n_k > threshold) {
            return Err(MoggeError::DegenerateComponent { k: k + 1, n_k });
        }
    }
    Ok(counts)
}

/// Weighted Gaussian-mixture M-step for mixing weights, means and covariances.
pub fn m_step_gating(
    data: &DataSet,
    tau: &Responsibilities,
    gating_cov: CovarianceKind,
) -> Result<Vec<GatingComponent>> {
    let counts = checked_counts(tau)?;
    let x = data.x();
    let n = data.n() as f64;
    let p = data.p();
    let mut gating: Vec<GatingComponent> = counts
        .iter()
        .enumerate()
        .map(|(k, &n_k)| {
            let w = tau.tau.column(k);
            let mean = x.tr_mul(&w) / n_k;
            let centered = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] - mean[j]);
            let cov = match gating_cov {
                CovarianceKind::Full => {
                    let weighted = DMatrix::from_fn(x.nrows(), p, |i, j| w[i] * centered[(i, j)]);
                    let r = weighted.tr_mul(&centered) / n_k;
                    let r = (&r + r.transpose()) * 0.5;
                    Covariance::Full(r + DMatrix::identity(p, p) * COV_JITTER)
                }
                CovarianceKind::Diagonal => Covariance::Diagonal(DVector::from_fn(p, |j, _| {
                    let s: f64 = (0..x.nrows()).map(|i| w[i] * centered[(i, j)].powi(2)).sum();
                    (s / n_k).max(VARIANCE_FLOOR)
                })),
            };
            GatingComponent { alpha: n_k / n, mean, cov }
        })
        .collect();
    normalize_alphas(&mut gating);
    Ok(gating)
}

/// Closed-form expert updates in the order: intercept given the previous
/// coefficients, coefficients given the new intercept, then the covariance.
pub fn m_step_experts(
    data: &DataSet,
    tau: &Responsibilities,
    previous: &[ExpertComponent],
) -> Result<Vec<ExpertComponent>> {
    let counts = checked_counts(tau)?;
    if previous.len() != counts.len() {
        return Err(MoggeError::Dimension(format!(
            "{} previous experts for {} components",
            previous.len(),
            counts.len()
        )));
    }
    let x = data.x();
    let y = data.y();
    let p = data.p();
    counts
        .iter()
        .zip(previous)
        .enumerate()
        .map(|(k, (&n_k, prev))| {
            let w = tau.tau.column(k);
            let wx = x.tr_mul(&w); // sum_i w_i x_i
            let wy = y.tr_mul(&w); // sum_i w_i y_i
            let intercept = (&wy - prev.coeffs.tr_mul(&wx)) / n_k;

            let xw = DMatrix::from_fn(x.nrows(), p, |i, j| w[i] * x[(i, j)]);
            let gram = xw.tr_mul(x) + DMatrix::identity(p, p) * RIDGE;
            let rhs = xw.tr_mul(y) - &wx * intercept.transpose();
            let chol = Cholesky::new(gram).ok_or_else(|| {
                MoggeError::Numerical(format!("weighted Gram matrix of component {} is singular", k + 1))
            })?;
            let coeffs = chol.solve(&rhs);

            let fitted = x * &coeffs;
            let resid = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - intercept[j] - fitted[(i, j)]);
            let wresid = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| w[i] * resid[(i, j)]);
            let cov = floor_cov(wresid.tr_mul(&resid) / n_k);
            Ok(ExpertComponent { intercept, coeffs, cov })
        })
        .collect()
}

/// Relative change test shared by the EM loops.
pub(crate) fn has_converged(previous: f64, current: f64, tol: f64) -> bool {
    (current - previous).abs() <= tol * previous.abs().max(1.0)
}

/// Runs E/M alternations from `init`; the penalty is subtracted from the
/// joint log-likelihood to form the recorded objective.
pub(crate) fn ascend<M, P>(
    data: &DataSet,
    init: MoggeParams,
    max_iter: usize,
    tol: f64,
    penalty: P,
    mut m_step: M,
) -> Result<FitResult>
where
    M: FnMut(&Responsibilities, &MoggeParams) -> Result<MoggeParams>,
    P: Fn(&MoggeParams) -> f64,
{
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    loop {
        let (tau, loglik) = e_step(data, &params)?;
        let objective = loglik - penalty(&params);
        if !objective.is_finite() {
            return Err(MoggeError::Numerical(format!(
                "objective became {objective} at iteration {}",
                trace.len() + 1
            )));
        }
        let converged = trace.last().is_some_and(|&prev| has_converged(prev, objective, tol));
        trace.push(objective);
        if converged || trace.len() >= max_iter {
            return Ok(FitResult {
                params,
                n_iter: trace.len(),
                loglik_trace: trace,
                responsibilities: tau,
                converged,
                objective,
            });
        }
        params = m_step(&tau, &params)?;
    }
}

/// One EM run from the given parameters.
pub fn fit_em_from(data: &DataSet, init: MoggeParams, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    init.check_data(data)?;
    let kind = opts.gating_cov;
    ascend(data, init, opts.max_iter, opts.tol, |_| 0.0, |tau, prev| {
        let gating = m_step_gating(data, tau, kind)?;
        let experts = m_step_experts(data, tau, &prev.experts)?;
        MoggeParams::new(gating, experts)
    })
}

/// Runs `run` on each start in parallel and keeps the best final objective.
pub(crate) fn best_of_starts<F>(n_starts: usize, run: F) -> Result<FitResult>
where
    F: Fn(usize) -> Result<FitResult> + Sync,
{
    let outcomes: Vec<Result<FitResult>> = (0..n_starts).into_par_iter().map(&run).collect();
    let mut best: Option<FitResult> = None;
    let mut failures = Vec::new();
    for (start, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.objective > b.objective) {
                    best = Some(fit);
                }
            }
            Err(e) => failures.push(format!("start {}: {e}", start + 1)),
        }
    }
    best.ok_or(MoggeError::FitFailed(failures))
}

/// Multi-start maximum-likelihood EM.
pub fn fit_em(data: &DataSet, k: usize, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    best_of_starts(opts.n_starts, |start| {
        let mut rng = stream_rng(opts.seed, start as u64);
        let init = init_params_with(data, k, opts.init_strategy, opts.gating_cov, &mut rng)?;
        fit_em_from(data, init, opts)
    })
}
