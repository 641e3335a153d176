//! Sampling from the hierarchical generative process
//! `Z ~ Mult(alpha)`, `X | Z ~ N_p(mu_Z, R_Z)`, `Y | X, Z ~ N(a_Z + B_Z^T X, Sigma_Z)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::em::stream_rng;
use crate::error::{MoggeError, Result};
use crate::model::{Covariance, DataSet, ExpertComponent, GatingComponent, MoggeParams};

/// How the listed expert vectors of the reference scenario map onto
/// intercepts and slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterceptConvention {
    /// Intercepts are zero and each listed 8-vector is the slope vector.
    #[default]
    Zero,
    /// The first listed entry is the intercept; its slope is set to zero.
    FirstEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub true_params: MoggeParams,
    pub n: usize,
    pub seed: u64,
    pub intercept_convention: InterceptConvention,
}

const MU_1: [f64; 8] = [0.0, 1.0, -1.0, -1.5, 0.0, 0.5, 0.0, 0.0];
const MU_2: [f64; 8] = [2.0, 0.0, 1.0, -1.5, 0.0, -0.5, 0.0, 0.0];
const BETA_1: [f64; 8] = [0.0, 1.5, 0.0, 0.0, 0.0, 1.0, 0.0, -0.5];
const BETA_2: [f64; 8] = [1.0, -1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.5];

/// The two-component, p = 8, n = 300 reference scenario.
pub fn default_scenario() -> Scenario {
    reference_scenario(InterceptConvention::Zero, 0)
}

pub fn reference_scenario(convention: InterceptConvention, seed: u64) -> Scenario {
    let gate = |mu: &[f64; 8]| GatingComponent {
        alpha: 0.5,
        mean: DVector::from_column_slice(mu),
        cov: Covariance::Diagonal(DVector::from_element(8, 1.0)),
    };
    let expert = |beta: &[f64; 8]| {
        let mut slope = DVector::from_column_slice(beta);
        let intercept = match convention {
            InterceptConvention::Zero => 0.0,
            InterceptConvention::FirstEntry => {
                let first = slope[0];
                slope[0] = 0.0;
                first
            }
        };
        ExpertComponent::univariate(intercept, slope, 1.0)
    };
    let true_params = MoggeParams::new(vec![gate(&MU_1), gate(&MU_2)], vec![expert(&BETA_1), expert(&BETA_2)])
        .expect("reference scenario parameters are valid");
    Scenario { true_params, n: 300, seed, intercept_convention: convention }
}

/// Samples the scenario's dataset (stream 0) with 1-based true labels.
pub fn sample_dataset(scenario: &Scenario) -> Result<(DataSet, Vec<usize>)> {
    sample_replicate(scenario, 0)
}

/// Samples replicate `index`; every replicate draws from its own RNG stream.
pub fn sample_replicate(scenario: &Scenario, index: u64) -> Result<(DataSet, Vec<usize>)> {
    let params = &scenario.true_params;
    params.validate()?;
    if scenario.n == 0 {
        return Err(MoggeError::InvalidArgument("sample size must be positive".into()));
    }
    let (n, p, d) = (scenario.n, params.p(), params.d());
    let gate_factors: Vec<DMatrix<f64>> = params
        .gating
        .iter()
        .enumerate()
        .map(|(k, g)| match &g.cov {
            Covariance::Diagonal(v) => Ok(DMatrix::from_diagonal(&v.map(f64::sqrt))),
            Covariance::Full(m) => Cholesky::new(m.clone())
                .map(|c| c.l())
                .ok_or_else(|| MoggeError::NotPositiveDefinite(format!("gating component {}", k + 1))),
        })
        .collect::<Result<_>>()?;
    let expert_factors: Vec<DMatrix<f64>> = params
        .experts
        .iter()
        .enumerate()
        .map(|(k, e)| {
            Cholesky::new(e.cov.clone())
                .map(|c| c.l())
                .ok_or_else(|| MoggeError::NotPositiveDefinite(format!("expert component {}", k + 1)))
        })
        .collect::<Result<_>>()?;

    let alphas = params.alphas();
    let mut rng = stream_rng(scenario.seed, index);
    let mut x = DMatrix::zeros(n, p);
    let mut y = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut z = alphas.len() - 1;
        for (k, a) in alphas.iter().enumerate() {
            acc += a;
            if u < acc {
                z = k;
                break;
            }
        }
        let noise = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let xi = &params.gating[z].mean + &gate_factors[z] * noise;
        let e = &params.experts[z];
        let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let yi = &e.intercept + e.coeffs.tr_mul(&xi) + &expert_factors[z] * noise;
        x.row_mut(i).copy_from(&xi.transpose());
        y.row_mut(i).copy_from(&yi.transpose());
        labels.push(z + 1);
    }
    Ok((DataSet::new(x, y)?, labels))
}
