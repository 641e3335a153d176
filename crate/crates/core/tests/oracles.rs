mod common;

use common::*;
use mogge_core::em::{m_step_experts, m_step_gating};
use mogge_core::lasso::{ca_update_expert_coeffs, ca_update_gating_means, update_expert_intercept_variance};
use mogge_core::select::{bic_value, count_df};
use mogge_core::*;
use nalgebra::DVector;
use rand::Rng;

fn tight(lambda: f64, gamma: f64) -> PenaltyConfig {
    PenaltyConfig { lambda, gamma, ca_max_iter: 100_000, ca_tol: 1e-15 }
}

#[test]
fn coordinate_ascent_matches_exact_weighted_lasso() {
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let n = r.random_range(20..=50);
        let p = r.random_range(2..=5);
        let (data, _) = random_dataset(seed, n, p, 1);
        let w = DVector::from_fn(n, |_, _| r.random_range(0.05..1.0));
        let lambda = r.random_range(0.0..20.0);
        let prev = ExpertComponent::univariate(r.random_range(-1.0..1.0), DVector::zeros(p), r.random_range(0.3..2.0));
        let got = ca_update_expert_coeffs(&data, &w, &prev, &tight(lambda, 0.0)).unwrap();
        let want = weighted_lasso_reference(
            data.x(),
            &data.y_vec().unwrap(),
            &w,
            prev.intercept0(),
            prev.variance(),
            lambda,
        );
        let err = vec_sup(&got, &want);
        assert!(err < 1e-5, "seed {seed}: {got} vs {want} ({err:e})");
        for (g, w) in got.iter().zip(want.iter()) {
            assert_eq!(*g == 0.0, *w == 0.0, "seed {seed}: support differs");
        }
    }
}

#[test]
fn gating_means_match_one_dimensional_search() {
    for seed in 0..20u64 {
        let mut r = rng(2000 + seed);
        let (data, truth) = random_dataset(seed, 40, 3, 2);
        let tau = random_tau(&mut r, 40, 2);
        let gamma = r.random_range(0.0..15.0);
        let means = ca_update_gating_means(&data, &tau, &truth.gating, &tight(0.0, gamma)).unwrap();
        for k in 0..2 {
            let nu2 = truth.gating[k].cov.diagonal().unwrap();
            let w = tau.tau.column(k).into_owned();
            for j in 0..3 {
                let want = gating_mean_reference(&data.x().column(j).into_owned(), &w, nu2[j], gamma);
                assert!((means[k][j] - want).abs() < 1e-9, "seed {seed} k {k} j {j}: {} vs {want}", means[k][j]);
            }
        }
    }
}

#[test]
fn gating_m_step_matches_weighted_moments() {
    for seed in 0..20u64 {
        let mut r = rng(3000 + seed);
        let (data, _) = random_dataset(seed, 50, 3, 2);
        let tau = random_tau(&mut r, 50, 3);
        let full = m_step_gating(&data, &tau, CovarianceKind::Full).unwrap();
        let diag = m_step_gating(&data, &tau, CovarianceKind::Diagonal).unwrap();
        for k in 0..3 {
            let (n_k, mean, cov) = weighted_moments(data.x(), &tau.tau.column(k).into_owned());
            assert!((full[k].alpha - n_k / 50.0).abs() < 1e-12);
            assert!(vec_sup(&full[k].mean, &mean) < 1e-10);
            let jittered = &cov + nalgebra::DMatrix::identity(3, 3) * 1e-10;
            assert!(sup_norm(&full[k].cov.to_dense(), &jittered) < 1e-10);
            let d = diag[k].cov.diagonal().unwrap();
            assert!(vec_sup(d, &cov.diagonal()) < 1e-10);
        }
    }
}

#[test]
fn expert_m_step_matches_weighted_least_squares() {
    for seed in 0..20u64 {
        let mut r = rng(4000 + seed);
        let (data, truth) = random_dataset(seed, 50, 4, 2);
        let tau = random_tau(&mut r, 50, 2);
        let experts = m_step_experts(&data, &tau, &truth.experts).unwrap();
        for k in 0..2 {
            let w = tau.tau.column(k).into_owned();
            let (a, beta, s2) = wls_reference(data.x(), &data.y_vec().unwrap(), &w, &truth.experts[k].beta());
            assert!((experts[k].intercept0() - a).abs() < 1e-10, "seed {seed}");
            assert!(vec_sup(&experts[k].beta(), &beta) < 1e-10, "seed {seed}");
            assert!((experts[k].variance() - s2).abs() < 1e-10, "seed {seed}");
        }
    }
}

#[test]
fn intercept_and_variance_update_matches_moments() {
    let mut r = rng(5);
    let (data, _) = random_dataset(5, 30, 2, 1);
    let w = DVector::from_fn(30, |_, _| r.random_range(0.1..1.0));
    let beta = DVector::from_vec(vec![0.5, -1.0]);
    let (a, s2) = update_expert_intercept_variance(&data, &w, &beta).unwrap();
    let y = data.y_vec().unwrap();
    let resid: Vec<f64> = (0..30).map(|i| y[i] - data.x().row(i).dot(&beta.transpose())).collect();
    let total = w.sum();
    let mean = (0..30).map(|i| w[i] * resid[i]).sum::<f64>() / total;
    let var = (0..30).map(|i| w[i] * (resid[i] - mean).powi(2)).sum::<f64>() / total;
    assert!((a - mean).abs() < 1e-12);
    assert!((s2 - var).abs() < 1e-12);
}

#[test]
fn joint_loglik_matches_direct_summation() {
    for seed in 0..10u64 {
        let (data, truth) = random_dataset(seed, 40, 3, 3);
        let fast = joint_loglik(&data, &truth).unwrap();
        let slow = brute_joint_loglik(&data, &truth);
        assert!((fast - slow).abs() < 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn modified_bic_counts_nonzero_coefficients() {
    let (data, truth) = random_dataset(11, 60, 4, 2);
    let nnz = truth.gating.iter().flat_map(|g| g.mean.iter()).filter(|v| **v != 0.0).count()
        + truth.experts.iter().flat_map(|e| e.coeffs.iter()).filter(|v| **v != 0.0).count();
    // mixing weights, variances per gate, intercepts, expert variances
    let expected = 1 + nnz + 2 * 4 + 2 + 2;
    assert_eq!(count_df(&truth).unwrap(), expected);
    let ll = joint_loglik(&data, &truth).unwrap();
    let bic = bic_value(ll, expected, 60);
    assert!((bic - (ll - expected as f64 * 60f64.ln() / 2.0)).abs() < 1e-12);
}
