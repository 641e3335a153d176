mod common;

use common::rng;
use mogge_core::*;
use rand::Rng;

#[test]
fn large_sample_moments_match_the_generating_model() {
    let scenario = Scenario { n: 100_000, ..default_scenario() };
    let truth = scenario.true_params.clone();
    let (data, labels) = sample_dataset(&scenario).unwrap();
    let n = data.n() as f64;

    // Mixing proportion: binomial standard error.
    let share = labels.iter().filter(|&&l| l == 1).count() as f64 / n;
    assert!((share - 0.5).abs() < 3.0 * (0.25 / n).sqrt(), "share {share}");

    for k in 0..2 {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == k + 1).collect();
        let m = rows.len() as f64;
        let se = (1.0 / m).sqrt();
        for j in 0..8 {
            let mean = rows.iter().map(|&i| data.x()[(i, j)]).sum::<f64>() / m;
            assert!((mean - truth.gating[k].mean[j]).abs() < 3.0 * se, "x mean k {k} j {j}: {mean}");
            let var = rows.iter().map(|&i| (data.x()[(i, j)] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            assert!((var - 1.0).abs() < 3.0 * (2.0 / m).sqrt(), "x var k {k} j {j}: {var}");
        }
        // Residual mean and variance of y given x within the true component.
        let beta = truth.experts[k].beta();
        let resid: Vec<f64> =
            rows.iter().map(|&i| data.y()[(i, 0)] - data.x().row(i).dot(&beta.transpose())).collect();
        let mean = resid.iter().sum::<f64>() / m;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!(mean.abs() < 3.0 * se, "residual mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / m).sqrt(), "residual var {var}");
    }
}

#[test]
fn first_entry_convention_shifts_the_response() {
    let zero = sample_dataset(&scenario_with(InterceptConvention::Zero)).unwrap().0;
    let first = sample_dataset(&scenario_with(InterceptConvention::FirstEntry)).unwrap().0;
    assert_eq!(zero.x(), first.x());
    assert_ne!(zero.y(), first.y());
}

fn scenario_with(convention: InterceptConvention) -> Scenario {
    mogge_core::simulate::reference_scenario(convention, 3)
}

#[test]
fn random_partitions_have_near_zero_ari() {
    let mut r = rng(42);
    let mut values = Vec::new();
    for _ in 0..20 {
        let a: Vec<usize> = (0..1000).map(|_| r.random_range(1..=3)).collect();
        let b: Vec<usize> = (0..1000).map(|_| r.random_range(1..=3)).collect();
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!(ari.abs() < 0.1, "{ari}");
        values.push(ari);
    }
    let summary = MeanSd::of(&values).unwrap();
    assert!(summary.mean.abs() < 0.01);
}

#[test]
fn true_parameters_score_perfect_sparsity() {
    let truth = default_scenario().true_params;
    let report = sensitivity_specificity(&truth, &truth, &[0, 1]).unwrap();
    for block in report.experts.iter().chain(&report.gates) {
        assert_eq!(block.sensitivity, Some(1.0));
        assert_eq!(block.specificity, Some(1.0));
    }
    let swapped = truth.permuted(&[1, 0]);
    let perm = mogge_core::metrics::match_by_distance(&truth, &swapped).unwrap();
    assert_eq!(perm, vec![1, 0]);
    let report = sensitivity_specificity(&truth, &swapped, &perm).unwrap();
    assert_eq!(report.gate().sensitivity, Some(1.0));
}
