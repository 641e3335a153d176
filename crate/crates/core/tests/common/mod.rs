//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use mogge_core::lasso::lasso_m_step;
use mogge_core::model::e_step;
use mogge_core::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse K-component truth with diagonal gating and unit-ish scales.
pub fn random_truth(rng: &mut ChaCha8Rng, p: usize, k: usize) -> MoggeParams {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sparse = |rng: &mut ChaCha8Rng, scale: f64| {
        DVector::from_fn(p, |_, _| if rng.random_bool(0.4) { 0.0 } else { scale * normal.sample(rng) })
    };
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let gating = raw
        .iter()
        .map(|a| GatingComponent {
            alpha: a / total,
            mean: sparse(rng, 2.0),
            cov: Covariance::Diagonal(DVector::from_fn(p, |_, _| rng.random_range(0.5..2.0))),
        })
        .collect();
    let experts = (0..k)
        .map(|_| ExpertComponent::univariate(normal.sample(rng), sparse(rng, 1.5), rng.random_range(0.2..1.0)))
        .collect();
    MoggeParams::new(gating, experts).unwrap()
}

pub fn random_dataset(seed: u64, n: usize, p: usize, k: usize) -> (DataSet, MoggeParams) {
    let mut r = rng(seed);
    let truth = random_truth(&mut r, p, k);
    let scenario = Scenario { true_params: truth.clone(), n, seed, intercept_convention: InterceptConvention::Zero };
    let (data, _) = sample_dataset(&scenario).unwrap();
    (data, truth)
}

/// Random responsibilities with rows on the simplex.
pub fn random_tau(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Responsibilities {
    let mut tau = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..1.0));
    for mut row in tau.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Responsibilities { tau }
}

pub fn sup_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn vec_sup(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute parameter difference between two same-shaped fits.
pub fn params_sup(a: &MoggeParams, b: &MoggeParams) -> f64 {
    let mut worst: f64 = 0.0;
    for (ga, gb) in a.gating.iter().zip(&b.gating) {
        worst = worst.max((ga.alpha - gb.alpha).abs());
        worst = worst.max(vec_sup(&ga.mean, &gb.mean));
        worst = worst.max(sup_norm(&ga.cov.to_dense(), &gb.cov.to_dense()));
    }
    for (ea, eb) in a.experts.iter().zip(&b.experts) {
        worst = worst.max(vec_sup(&ea.intercept, &eb.intercept));
        worst = worst.max(sup_norm(&ea.coeffs, &eb.coeffs));
        worst = worst.max(sup_norm(&ea.cov, &eb.cov));
    }
    worst
}

/// Joint log-likelihood summed term by term with explicit inverses and
/// determinants.
pub fn brute_joint_loglik(data: &DataSet, params: &MoggeParams) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let density = |v: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>| {
        let diff = v - mean;
        let inv = cov.clone().try_inverse().unwrap();
        let quad = (diff.transpose() * inv * &diff)[(0, 0)];
        (-0.5 * quad).exp() / (two_pi.powi(v.len() as i32) * cov.determinant()).sqrt()
    };
    (0..data.n())
        .map(|i| {
            let x = data.x().row(i).transpose();
            let y = data.y().row(i).transpose();
            params
                .gating
                .iter()
                .zip(&params.experts)
                .map(|(g, e)| {
                    let mean_y = &e.intercept + e.coeffs.tr_mul(&x);
                    g.alpha * density(&x, &g.mean, &g.cov.to_dense()) * density(&y, &mean_y, &e.cov)
                })
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// Exact minimizer of `0.5 * sum_i w_i (y_i - a - x_i^T b)^2 / s2 + lambda * |b|_1`
/// by enumerating every active set and sign pattern and keeping the
/// candidate that satisfies the optimality conditions.
pub fn weighted_lasso_reference(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    intercept: f64,
    s2: f64,
    lambda: f64,
) -> DVector<f64> {
    let (n, p) = x.shape();
    let r = DVector::from_fn(n, |i, _| y[i] - intercept);
    let gram = DMatrix::from_fn(p, p, |a, b| (0..n).map(|i| w[i] * x[(i, a)] * x[(i, b)]).sum::<f64>());
    let corr = DVector::from_fn(p, |a, _| (0..n).map(|i| w[i] * x[(i, a)] * r[i]).sum::<f64>());
    let t = lambda * s2;
    let objective = |b: &DVector<f64>| 0.5 * (b.transpose() * &gram * b)[(0, 0)] - corr.dot(b) + t * b.abs().sum();

    let mut best: Option<(f64, DVector<f64>)> = None;
    let patterns = 3usize.pow(p as u32);
    for code in 0..patterns {
        let mut signs = vec![0i32; p];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i32 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..p).filter(|&j| signs[j] != 0).collect();
        let mut beta = DVector::zeros(p);
        if !active.is_empty() {
            let m = active.len();
            let g = DMatrix::from_fn(m, m, |a, b| gram[(active[a], active[b])]);
            let rhs = DVector::from_fn(m, |a, _| corr[active[a]] - t * signs[active[a]] as f64);
            let Some(sol) = g.lu().solve(&rhs) else { continue };
            if active.iter().zip(sol.iter()).any(|(&j, &v)| v * signs[j] as f64 <= 0.0) {
                continue;
            }
            for (&j, &v) in active.iter().zip(sol.iter()) {
                beta[j] = v;
            }
        }
        let grad = &corr - &gram * &beta;
        let slack = 1e-9 * (1.0 + t);
        if (0..p).any(|j| signs[j] == 0 && grad[j].abs() > t + slack) {
            continue;
        }
        let value = objective(&beta);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, beta));
        }
    }
    best.expect("some sign pattern satisfies the optimality conditions").1
}

/// Minimizer of `0.5 * sum_i w_i (x_i - m)^2 / nu2 + gamma * |m|` by
/// bisection on its (monotone) derivative.
pub fn gating_mean_reference(x: &DVector<f64>, w: &DVector<f64>, nu2: f64, gamma: f64) -> f64 {
    let smooth = |m: f64| x.iter().zip(w.iter()).map(|(xi, wi)| wi * (m - xi)).sum::<f64>() / nu2;
    if smooth(0.0).abs() <= gamma {
        return 0.0;
    }
    let derivative = |m: f64| smooth(m) + gamma * m.signum();
    let bound = x.abs().max() + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if derivative(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Weighted mean and (biased) weighted covariance with plain loops.
pub fn weighted_moments(x: &DMatrix<f64>, w: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            mean[j] += w[i] * x[(i, j)];
        }
    }
    mean /= total;
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += w[i] * (x[(i, a)] - mean[a]) * (x[(i, b)] - mean[b]);
            }
        }
    }
    (total, mean, cov / total)
}

/// Expert update via QR of the row-scaled design: intercept from the
/// previous slopes, slopes (with the same 1e-8 ridge) from the new intercept.
pub fn wls_reference(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    previous_beta: &DVector<f64>,
) -> (f64, DVector<f64>, f64) {
    let (n, p) = x.shape();
    let total: f64 = w.iter().sum();
    let a = (0..n).map(|i| w[i] * (y[i] - x.row(i).dot(&previous_beta.transpose()))).sum::<f64>() / total;
    let ridge = 1e-8f64.sqrt();
    let design = DMatrix::from_fn(n + p, p, |i, j| {
        if i < n {
            w[i].sqrt() * x[(i, j)]
        } else if i - n == j {
            ridge
        } else {
            0.0
        }
    });
    let target = DVector::from_fn(n + p, |i, _| if i < n { w[i].sqrt() * (y[i] - a) } else { 0.0 });
    let qr = design.qr();
    let beta = qr.r().solve_upper_triangular(&(qr.q().transpose() * target)).unwrap();
    let s2 = (0..n).map(|i| w[i] * (y[i] - a - x.row(i).dot(&beta.transpose())).powi(2)).sum::<f64>() / total;
    (a, beta, s2)
}

/// Largest violation of the lasso stationarity conditions at `params`,
/// taken as a fixed point of the penalized EM map.
///
/// With `tau` the responsibilities at `params` and the variances held at
/// their current values, gating mean `mu_kj` must satisfy
/// `X_j^T tau_k - n_k mu_kj in gamma nu2_kj d|mu_kj|` and slope `b_kj`
/// `X_j^T W_k (y - a_k - X b_k) in lambda s2_k d|b_kj|`.
pub fn kkt_violation(data: &DataSet, params: &MoggeParams, lambda: f64, gamma: f64) -> f64 {
    let (tau, _) = e_step(data, params).unwrap();
    let x = data.x();
    let y = data.y_vec().unwrap();
    let (n, p) = (data.n(), data.p());
    let mut worst: f64 = 0.0;
    let condition = |grad: f64, value: f64, threshold: f64| {
        if value == 0.0 {
            (grad.abs() - threshold).max(0.0)
        } else {
            (grad - threshold * value.signum()).abs()
        }
    };
    for k in 0..params.k() {
        let w = tau.tau.column(k);
        let n_k: f64 = w.sum();
        let g = &params.gating[k];
        let nu2 = g.cov.diagonal().unwrap();
        let e = &params.experts[k];
        let (a, beta, s2) = (e.intercept0(), e.beta(), e.variance());
        for j in 0..p {
            let grad = (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() - n_k * g.mean[j];
            worst = worst.max(condition(grad, g.mean[j], gamma * nu2[j]));
            let grad: f64 = (0..n)
                .map(|i| w[i] * x[(i, j)] * (y[i] - a - x.row(i).dot(&beta.transpose())))
                .sum();
            worst = worst.max(condition(grad, beta[j], lambda * s2));
        }
    }
    worst
}

/// Continues the EM-Lasso map from `params` until successive iterates agree
/// to `eps` in every coordinate.
pub fn iterate_to_fixed_point(
    data: &DataSet,
    mut params: MoggeParams,
    penalty: &PenaltyConfig,
    eps: f64,
) -> (MoggeParams, usize) {
    for step in 1..=50_000 {
        let (tau, _) = e_step(data, &params).unwrap();
        let next = lasso_m_step(data, &tau, &params, penalty).unwrap();
        let change = params_sup(&params, &next);
        params = next;
        if change < eps {
            return (params, step);
        }
    }
    panic!("EM-Lasso map did not settle");
}
