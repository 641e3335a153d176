//! Clustering agreement and sparsity-recovery scores.
//!
//! Labels are 1-based throughout (`1..=K`).
//!
//! Sparsity scores follow the convention used for penalized mixtures of
//! experts: *sensitivity* is the proportion of true-zero coefficients
//! estimated as exactly zero, *specificity* the proportion of true-nonzero
//! coefficients estimated as nonzero. This is the reverse of the usual
//! diagnostic-test naming.

use std::collections::HashMap;

use itertools::Itertools;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MoggeError, Result};
use crate::model::{posterior_responsibilities, DataSet, MoggeParams};

/// Exhaustive permutation search is capped at this many components.
pub const MAX_PERMUTATION_K: usize = 8;

/// Bayes allocation: argmax of the posterior responsibilities per row.
pub fn bayes_labels(data: &DataSet, params: &MoggeParams) -> Result<Vec<usize>> {
    Ok(posterior_responsibilities(data, params)?.labels())
}

fn check_labels(labels: &[usize], k: usize, which: &str) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > k) {
        return Err(MoggeError::InvalidArgument(format!("{which} label {bad} outside 1..={k}")));
    }
    Ok(())
}

/// Best agreement over all relabelings of `estimated`.
///
/// Returns the rate and the permutation `perm` (0-based) mapping estimated
/// component `e` to true component `perm[e]`.
pub fn best_permutation(truth: &[usize], estimated: &[usize], k: usize) -> Result<(f64, Vec<usize>)> {
    if k == 0 || k > MAX_PERMUTATION_K {
        return Err(MoggeError::Unsupported(format!(
            "permutation matching supports 1 <= K <= {MAX_PERMUTATION_K}, got {k}"
        )));
    }
    if truth.len() != estimated.len() || truth.is_empty() {
        return Err(MoggeError::InvalidArgument(format!(
            "label vectors of lengths {} and {}",
            truth.len(),
            estimated.len()
        )));
    }
    check_labels(truth, k, "true")?;
    check_labels(estimated, k, "estimated")?;

    let mut table = vec![vec![0usize; k]; k];
    for (&t, &e) in truth.iter().zip(estimated) {
        table[e - 1][t - 1] += 1;
    }
    let (hits, perm) = (0..k)
        .permutations(k)
        .map(|perm| ((0..k).map(|e| table[e][perm[e]]).sum::<usize>(), perm))
        .fold((0usize, Vec::new()), |best, cur| if cur.0 > best.0 || best.1.is_empty() { cur } else { best });
    Ok((hits as f64 / truth.len() as f64, perm))
}

pub fn classification_rate(truth: &[usize], estimated: &[usize], k: usize) -> Result<f64> {
    Ok(best_permutation(truth, estimated, k)?.0)
}

fn choose2(v: usize) -> i128 {
    let v = v as i128;
    v * (v - 1) / 2
}

/// Adjusted Rand index from the contingency table. Labels may be any values.
pub fn adjusted_rand_index(truth: &[usize], estimated: &[usize]) -> Result<f64> {
    if truth.len() != estimated.len() {
        return Err(MoggeError::InvalidArgument(format!(
            "label vectors of lengths {} and {}",
            truth.len(),
            estimated.len()
        )));
    }
    let n = truth.len();
    if n < 2 {
        return Err(MoggeError::InvalidArgument("ARI needs at least two observations".into()));
    }
    let mut cells: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&t, &e) in truth.iter().zip(estimated) {
        *cells.entry((t, e)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(e).or_default() += 1;
    }
    // Pair counts are integers, so the index is formed exactly and divided once.
    let index: i128 = cells.values().map(|&c| choose2(c)).sum();
    let sum_rows: i128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: i128 = cols.values().map(|&c| choose2(c)).sum();
    let pairs = choose2(n);
    let numer = 2 * (index * pairs - sum_rows * sum_cols);
    let denom = pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols;
    if denom == 0 {
        // Both partitions trivial (one block, or all singletons).
        return Ok(if numer == 0 { 1.0 } else { 0.0 });
    }
    Ok(numer as f64 / denom as f64)
}

/// Sparsity recovery for one coefficient block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub true_zero: usize,
    pub true_nonzero: usize,
    /// Share of true zeros estimated as exactly zero; absent without true zeros.
    pub sensitivity: Option<f64>,
    /// Share of true nonzeros estimated as nonzero; absent without true nonzeros.
    pub specificity: Option<f64>,
}

impl BlockScore {
    pub fn score(truth: &DVector<f64>, estimate: &DVector<f64>) -> Result<Self> {
        if truth.len() != estimate.len() {
            return Err(MoggeError::Dimension(format!(
                "coefficient blocks of lengths {} and {}",
                truth.len(),
                estimate.len()
            )));
        }
        let (mut tz, mut tnz, mut hit_z, mut hit_nz) = (0, 0, 0, 0);
        for (&t, &e) in truth.iter().zip(estimate.iter()) {
            if t == 0.0 {
                tz += 1;
                hit_z += usize::from(e == 0.0);
            } else {
                tnz += 1;
                hit_nz += usize::from(e != 0.0);
            }
        }
        let ratio = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
        Ok(Self {
            true_zero: tz,
            true_nonzero: tnz,
            sensitivity: ratio(hit_z, tz),
            specificity: ratio(hit_nz, tnz),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// One block per expert coefficient vector, in true-component order.
    pub experts: Vec<BlockScore>,
    /// One block per gating mean vector, in true-component order.
    pub gates: Vec<BlockScore>,
}

impl SparsityReport {
    /// The gate block reported in summary tables: that of true component 1.
    pub fn gate(&self) -> &BlockScore {
        &self.gates[0]
    }
}

/// Reorders `estimated` so its component `t` is the one matched to true component `t`.
pub fn align_to_truth(estimated: &MoggeParams, perm: &[usize]) -> Result<MoggeParams> {
    let k = estimated.k();
    if perm.len() != k || !perm.iter().copied().sorted().eq(0..k) {
        return Err(MoggeError::InvalidArgument(format!("{perm:?} is not a permutation of 0..{k}")));
    }
    let mut inverse = vec![0; k];
    for (e, &t) in perm.iter().enumerate() {
        inverse[t] = e;
    }
    Ok(estimated.permuted(&inverse))
}

/// Matching by smallest squared distance between gating means and expert
/// coefficients, for when no labelled data is at hand.
pub fn match_by_distance(truth: &MoggeParams, estimated: &MoggeParams) -> Result<Vec<usize>> {
    let k = truth.k();
    if estimated.k() != k || estimated.p() != truth.p() || estimated.d() != truth.d() {
        return Err(MoggeError::Dimension("parameter sets have different shapes".into()));
    }
    if k > MAX_PERMUTATION_K {
        return Err(MoggeError::Unsupported(format!("K = {k} too large for permutation matching")));
    }
    let cost = |e: usize, t: usize| {
        (&estimated.gating[e].mean - &truth.gating[t].mean).norm_squared()
            + (&estimated.experts[e].coeffs - &truth.experts[t].coeffs).norm_squared()
            + (&estimated.experts[e].intercept - &truth.experts[t].intercept).norm_squared()
    };
    Ok((0..k)
        .permutations(k)
        .map(|perm| ((0..k).map(|e| cost(e, perm[e])).sum::<f64>(), perm))
        .fold((f64::INFINITY, Vec::new()), |best, cur| if cur.0 < best.0 { cur } else { best })
        .1)
}

/// Sensitivity/specificity per block after matching estimated components to
/// true ones through `perm` (as returned by [`best_permutation`]).
pub fn sensitivity_specificity(
    truth: &MoggeParams,
    estimated: &MoggeParams,
    perm: &[usize],
) -> Result<SparsityReport> {
    if truth.k() != estimated.k() || truth.p() != estimated.p() {
        return Err(MoggeError::Dimension("parameter sets have different shapes".into()));
    }
    let aligned = align_to_truth(estimated, perm)?;
    let experts = truth
        .experts
        .iter()
        .zip(&aligned.experts)
        .map(|(t, e)| BlockScore::score(&t.coeffs.column(0).into_owned(), &e.coeffs.column(0).into_owned()))
        .collect::<Result<_>>()?;
    let gates = truth
        .gating
        .iter()
        .zip(&aligned.gating)
        .map(|(t, e)| BlockScore::score(&t.mean, &e.mean))
        .collect::<Result<_>>()?;
    Ok(SparsityReport { experts, gates })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd, count })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Covariance, ExpertComponent, GatingComponent};

    #[test]
    fn classification_rate_micro_examples() {
        assert_eq!(classification_rate(&[1, 1, 2, 2], &[1, 1, 2, 2], 2).unwrap(), 1.0);
        assert_eq!(classification_rate(&[1, 1, 2, 2], &[2, 2, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(classification_rate(&[1, 1, 2, 2], &[1, 2, 2, 2], 2).unwrap(), 0.75);
    }

    #[test]
    fn classification_rate_errors() {
        assert!(matches!(classification_rate(&[1; 9], &[1; 9], 9), Err(MoggeError::Unsupported(_))));
        assert!(matches!(classification_rate(&[1, 3], &[1, 2], 2), Err(MoggeError::InvalidArgument(_))));
        assert!(matches!(classification_rate(&[1, 0], &[1, 2], 2), Err(MoggeError::InvalidArgument(_))));
    }

    #[test]
    fn ari_micro_examples() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(), -0.5);
        assert!(adjusted_rand_index(&[1], &[1]).is_err());
        assert_eq!(adjusted_rand_index(&[1, 1, 1], &[4, 4, 4]).unwrap(), 1.0);
    }

    fn params(beta: [f64; 3], mu: [f64; 3]) -> MoggeParams {
        MoggeParams::new(
            vec![GatingComponent {
                alpha: 1.0,
                mean: DVector::from_column_slice(&mu),
                cov: Covariance::Diagonal(DVector::from_element(3, 1.0)),
            }],
            vec![ExpertComponent::univariate(0.0, DVector::from_column_slice(&beta), 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn sparsity_scores() {
        let truth = params([0.0, 1.0, 0.0], [2.0, 0.0, 0.0]);
        let exact = sensitivity_specificity(&truth, &truth, &[0]).unwrap();
        assert_eq!(exact.experts[0].sensitivity, Some(1.0));
        assert_eq!(exact.experts[0].specificity, Some(1.0));
        assert_eq!(exact.gate().sensitivity, Some(1.0));

        let dense = params([0.1, 1.0, -0.2], [2.0, 0.01, 0.3]);
        let r = sensitivity_specificity(&truth, &dense, &[0]).unwrap();
        assert_eq!(r.experts[0].sensitivity, Some(0.0));
        assert_eq!(r.experts[0].specificity, Some(1.0));

        let no_zeros = params([1.0, 1.0, 1.0], [1.0, 1.0, 1.0]);
        let r = sensitivity_specificity(&no_zeros, &dense, &[0]).unwrap();
        assert_eq!(r.experts[0].sensitivity, None);
        assert_eq!(r.experts[0].true_zero, 0);
    }

    #[test]
    fn distance_matching_undoes_swaps() {
        let a = params([0.0, 1.0, 0.0], [2.0, 0.0, 0.0]);
        let b = params([3.0, 1.0, 0.0], [-2.0, 0.0, 1.0]);
        let truth = MoggeParams {
            gating: vec![
                GatingComponent { alpha: 0.5, ..a.gating[0].clone() },
                GatingComponent { alpha: 0.5, ..b.gating[0].clone() },
            ],
            experts: vec![a.experts[0].clone(), b.experts[0].clone()],
        };
        let swapped = truth.permuted(&[1, 0]);
        let perm = match_by_distance(&truth, &swapped).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(align_to_truth(&swapped, &perm).unwrap(), truth);
    }

    #[test]
    fn mean_sd() {
        let s = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, 1.0);
        assert!(MeanSd::of(&[]).is_none());
    }
}
