//! Parameter containers and log-domain evaluation of the mixture densities.
//!
//! A mixture of Gaussian-gated experts models the pair `(x, y)` jointly as
//!
//! ```text
//! f(x, y) = sum_k alpha_k N_p(x; mu_k, R_k) N_d(y; a_k + B_k^T x, Sigma_k)
//! ```
//!
//! so the gating weights `g_k(x)` are the posterior probabilities of a
//! Gaussian mixture on `x`. Everything here is evaluated in the log domain.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MoggeError, Result};

/// Smallest admissible variance (or covariance eigenvalue jitter).
pub const VARIANCE_FLOOR: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `n` observed pairs: predictors `x` (n x p) and responses `y` (n x d).
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl DataSet {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(MoggeError::Dimension(format!(
                "data must be non-empty, got x {}x{} and y {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(MoggeError::Dimension(format!(
                "x has {} rows but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(MoggeError::InvalidArgument("data contains NaN or infinite values".into()));
        }
        Ok(Self { x, y })
    }

    /// Univariate-response dataset.
    pub fn univariate(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, DMatrix::from_column_slice(n, 1, y.as_slice()))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Response column for d = 1 data.
    pub fn y_vec(&self) -> Result<DVector<f64>> {
        if self.d() != 1 {
            return Err(MoggeError::Unsupported(format!(
                "univariate response required, got d = {}",
                self.d()
            )));
        }
        Ok(self.y.column(0).into_owned())
    }

    /// Stack `self` on top of `other`.
    pub fn concat(&self, other: &DataSet) -> Result<DataSet> {
        if self.p() != other.p() || self.d() != other.d() {
            return Err(MoggeError::Dimension("cannot stack datasets of different shape".into()));
        }
        let n = self.n() + other.n();
        let x = DMatrix::from_fn(n, self.p(), |i, j| {
            if i < self.n() {
                self.x[(i, j)]
            } else {
                other.x[(i - self.n(), j)]
            }
        });
        let y = DMatrix::from_fn(n, self.d(), |i, j| {
            if i < self.n() {
                self.y[(i, j)]
            } else {
                other.y[(i - self.n(), j)]
            }
        });
        DataSet::new(x, y)
    }
}

/// Covariance of a Gaussian: full SPD matrix or a vector of variances.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Full(m) => m.nrows(),
            Covariance::Diagonal(v) => v.len(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Covariance::Full(DMatrix::identity(dim, dim))
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Covariance::Diagonal(_))
    }

    pub fn diagonal(&self) -> Option<&DVector<f64>> {
        match self {
            Covariance::Diagonal(v) => Some(v),
            Covariance::Full(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Full(m) => m.clone(),
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }
}

/// Which covariance structure the gating network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingComponent {
    pub alpha: f64,
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertComponent {
    /// `a_k`, length d.
    pub intercept: DVector<f64>,
    /// `B_k`, p x d.
    pub coeffs: DMatrix<f64>,
    /// `Sigma_k`, d x d.
    pub cov: DMatrix<f64>,
}

impl ExpertComponent {
    pub fn univariate(intercept: f64, beta: DVector<f64>, variance: f64) -> Self {
        let p = beta.len();
        Self {
            intercept: DVector::from_element(1, intercept),
            coeffs: DMatrix::from_column_slice(p, 1, beta.as_slice()),
            cov: DMatrix::from_element(1, 1, variance),
        }
    }

    pub fn beta(&self) -> DVector<f64> {
        self.coeffs.column(0).into_owned()
    }

    pub fn intercept0(&self) -> f64 {
        self.intercept[0]
    }

    pub fn variance(&self) -> f64 {
        self.cov[(0, 0)]
    }
}

/// Full parameter vector of a K-component model.
#[derive(Debug, Clone, PartialEq)]
pub struct MoggeParams {
    pub gating: Vec<GatingComponent>,
    pub experts: Vec<ExpertComponent>,
}

impl MoggeParams {
    pub fn new(gating: Vec<GatingComponent>, experts: Vec<ExpertComponent>) -> Result<Self> {
        let params = Self { gating, experts };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.gating.len()
    }

    pub fn p(&self) -> usize {
        self.gating[0].mean.len()
    }

    pub fn d(&self) -> usize {
        self.experts[0].intercept.len()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.gating.iter().map(|g| g.alpha).collect()
    }

    pub fn has_diagonal_gating(&self) -> bool {
        self.gating.iter().all(|g| g.cov.is_diagonal())
    }

    /// Checks shapes, mixing weights and covariance admissibility.
    pub fn validate(&self) -> Result<()> {
        let k = self.gating.len();
        if k == 0 || self.experts.len() != k {
            return Err(MoggeError::Dimension(format!(
                "{} gating and {} expert components",
                k,
                self.experts.len()
            )));
        }
        let p = self.p();
        let d = self.d();
        let mut total = 0.0;
        for (idx, g) in self.gating.iter().enumerate() {
            if !(g.alpha > 0.0 && g.alpha <= 1.0) {
                return Err(MoggeError::InvalidArgument(format!(
                    "mixing weight {} of component {} outside (0, 1]",
                    g.alpha,
                    idx + 1
                )));
            }
            total += g.alpha;
            if g.mean.len() != p || g.cov.dim() != p {
                return Err(MoggeError::Dimension(format!(
                    "gating component {} does not have dimension {p}",
                    idx + 1
                )));
            }
            check_covariance(&g.cov, &format!("gating component {}", idx + 1))?;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(MoggeError::InvalidArgument(format!(
                "mixing weights sum to {total}, not 1"
            )));
        }
        for (idx, e) in self.experts.iter().enumerate() {
            if e.intercept.len() != d
                || e.coeffs.nrows() != p
                || e.coeffs.ncols() != d
                || e.cov.nrows() != d
                || e.cov.ncols() != d
            {
                return Err(MoggeError::Dimension(format!(
                    "expert component {} does not have dimensions p = {p}, d = {d}",
                    idx + 1
                )));
            }
            check_covariance(
                &Covariance::Full(e.cov.clone()),
                &format!("expert component {}", idx + 1),
            )?;
        }
        Ok(())
    }

    /// Component `k` of the result is component `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> MoggeParams {
        MoggeParams {
            gating: perm.iter().map(|&k| self.gating[k].clone()).collect(),
            experts: perm.iter().map(|&k| self.experts[k].clone()).collect(),
        }
    }

    /// Sum of `|beta_kj|` and sum of `|mu_kj|` over all components.
    pub fn l1_norms(&self) -> (f64, f64) {
        let beta: f64 = self.experts.iter().map(|e| e.coeffs.iter().map(|v| v.abs()).sum::<f64>()).sum();
        let mu: f64 = self.gating.iter().map(|g| g.mean.iter().map(|v| v.abs()).sum::<f64>()).sum();
        (beta, mu)
    }

    pub fn check_data(&self, data: &DataSet) -> Result<()> {
        if data.p() != self.p() || data.d() != self.d() {
            return Err(MoggeError::Dimension(format!(
                "data has p = {}, d = {} but parameters have p = {}, d = {}",
                data.p(),
                data.d(),
                self.p(),
                self.d()
            )));
        }
        Ok(())
    }
}

fn check_covariance(cov: &Covariance, what: &str) -> Result<()> {
    match cov {
        Covariance::Diagonal(v) => {
            if v.iter().any(|&s| !s.is_finite() || s < VARIANCE_FLOOR) {
                return Err(MoggeError::NotPositiveDefinite(what.to_string()));
            }
        }
        Covariance::Full(m) => {
            if m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
                return Err(MoggeError::NotPositiveDefinite(what.to_string()));
            }
            let tol = 1e-9 * m.amax().max(1.0);
            for i in 0..m.nrows() {
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > tol {
                        return Err(MoggeError::NotPositiveDefinite(format!("{what} (asymmetric)")));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Posterior membership probabilities, n x K.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub tau: DMatrix<f64>,
}

impl Responsibilities {
    pub fn n(&self) -> usize {
        self.tau.nrows()
    }

    pub fn k(&self) -> usize {
        self.tau.ncols()
    }

    /// Column sums `n_k`.
    pub fn counts(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.tau.column(k).sum()).collect()
    }

    /// Hard labels in `1..=K` by row argmax, ties to the smallest index.
    pub fn labels(&self) -> Vec<usize> {
        self.tau
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best + 1
            })
            .collect()
    }
}

/// A Gaussian log-density with its covariance factorized once.
#[derive(Debug, Clone)]
pub(crate) enum LogDensity {
    Full { chol: Cholesky<f64, Dyn>, log_norm: f64 },
    Diagonal { inv_var: DVector<f64>, log_norm: f64 },
}

impl LogDensity {
    pub(crate) fn new(cov: &Covariance, what: &str) -> Result<Self> {
        check_covariance(cov, what)?;
        let m = cov.dim() as f64;
        match cov {
            Covariance::Diagonal(v) => {
                let log_det: f64 = v.iter().map(|s| s.ln()).sum();
                Ok(LogDensity::Diagonal {
                    inv_var: v.map(|s| 1.0 / s),
                    log_norm: -0.5 * (m * LN_2PI + log_det),
                })
            }
            Covariance::Full(c) => {
                let chol = Cholesky::new(c.clone())
                    .ok_or_else(|| MoggeError::NotPositiveDefinite(what.to_string()))?;
                let l = chol.l_dirty();
                let log_det = 2.0 * (0..c.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
                if !log_det.is_finite() {
                    return Err(MoggeError::NotPositiveDefinite(what.to_string()));
                }
                Ok(LogDensity::Full { chol, log_norm: -0.5 * (m * LN_2PI + log_det) })
            }
        }
    }

    /// Log-density of each column of `centered` (dim x n), already mean-centred.
    pub(crate) fn eval_centered(&self, centered: &DMatrix<f64>) -> DVector<f64> {
        match self {
            LogDensity::Diagonal { inv_var, log_norm } => DVector::from_iterator(
                centered.ncols(),
                centered.column_iter().map(|c| {
                    let q: f64 = c.iter().zip(inv_var.iter()).map(|(r, w)| r * r * w).sum();
                    log_norm - 0.5 * q
                }),
            ),
            LogDensity::Full { chol, log_norm } => {
                let z = chol
                    .l_dirty()
                    .solve_lower_triangular(centered)
                    .expect("cholesky factor has a positive diagonal");
                DVector::from_iterator(
                    z.ncols(),
                    z.column_iter().map(|c| log_norm - 0.5 * c.norm_squared()),
                )
            }
        }
    }
}

/// `log N_m(v; mean, cov)`.
pub fn gaussian_logpdf(v: &DVector<f64>, mean: &DVector<f64>, cov: &Covariance) -> Result<f64> {
    if v.len() != mean.len() || cov.dim() != v.len() {
        return Err(MoggeError::Dimension(format!(
            "point of length {}, mean of length {}, covariance of dimension {}",
            v.len(),
            mean.len(),
            cov.dim()
        )));
    }
    let density = LogDensity::new(cov, "gaussian")?;
    let centered = DMatrix::from_column_slice(v.len(), 1, (v - mean).as_slice());
    Ok(density.eval_centered(&centered)[0])
}

/// Numerically stable `log(sum(exp(values)))`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log alpha_k + log N_p(x_i; mu_k, R_k)` for every row, n x K.
pub(crate) fn gating_log_terms(x: &DMatrix<f64>, params: &MoggeParams) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, params.k());
    for (k, g) in params.gating.iter().enumerate() {
        let density = LogDensity::new(&g.cov, &format!("gating component {}", k + 1))?;
        let centered = DMatrix::from_fn(x.ncols(), n, |j, i| x[(i, j)] - g.mean[j]);
        let logs = density.eval_centered(&centered);
        let la = g.alpha.ln();
        for i in 0..n {
            out[(i, k)] = la + logs[i];
        }
    }
    Ok(out)
}

/// `log N_d(y_i; a_k + B_k^T x_i, Sigma_k)` for every row, n x K.
pub(crate) fn expert_log_terms(data: &DataSet, params: &MoggeParams) -> Result<DMatrix<f64>> {
    let n = data.n();
    let mut out = DMatrix::zeros(n, params.k());
    for (k, e) in params.experts.iter().enumerate() {
        let density = LogDensity::new(
            &Covariance::Full(e.cov.clone()),
            &format!("expert component {}", k + 1),
        )?;
        // n x d fitted means
        let fitted = data.x() * &e.coeffs;
        let centered =
            DMatrix::from_fn(data.d(), n, |j, i| data.y()[(i, j)] - e.intercept[j] - fitted[(i, j)]);
        let logs = density.eval_centered(&centered);
        for i in 0..n {
            out[(i, k)] = logs[i];
        }
    }
    Ok(out)
}

/// Per-observation, per-component log joint terms, n x K.
pub(crate) fn joint_log_terms(data: &DataSet, params: &MoggeParams) -> Result<DMatrix<f64>> {
    params.check_data(data)?;
    Ok(gating_log_terms(data.x(), params)? + expert_log_terms(data, params)?)
}

/// Row-wise softmax of log terms plus the summed row log-normalizers.
pub(crate) fn normalize_rows(log_terms: &DMatrix<f64>) -> (Responsibilities, f64) {
    let mut tau = log_terms.clone();
    let mut total = 0.0;
    for mut row in tau.row_iter_mut() {
        let lse = log_sum_exp(row.iter().copied());
        total += lse;
        row.apply(|v| *v = (*v - lse).exp());
    }
    (Responsibilities { tau }, total)
}

/// Gating probabilities `g_k(x)` for a single predictor vector.
pub fn gating_probs(x: &DVector<f64>, params: &MoggeParams) -> Result<DVector<f64>> {
    if x.len() != params.p() {
        return Err(MoggeError::Dimension(format!(
            "x has length {} but p = {}",
            x.len(),
            params.p()
        )));
    }
    let xm = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    let logs = gating_log_terms(&xm, params)?;
    let (tau, _) = normalize_rows(&logs);
    Ok(tau.tau.row(0).transpose())
}

/// `log f(x) = log sum_k alpha_k N_p(x; mu_k, R_k)`.
pub fn marginal_x_logpdf(x: &DVector<f64>, params: &MoggeParams) -> Result<f64> {
    let xm = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    let logs = gating_log_terms(&xm, params)?;
    Ok(log_sum_exp(logs.row(0).iter().copied()))
}

/// `log f(y | x)`: gating-weighted mixture of the expert densities.
pub fn conditional_density(y: &DVector<f64>, x: &DVector<f64>, params: &MoggeParams) -> Result<f64> {
    if y.len() != params.d() || x.len() != params.p() {
        return Err(MoggeError::Dimension(format!(
            "(x, y) of lengths ({}, {}) for parameters with p = {}, d = {}",
            x.len(),
            y.len(),
            params.p(),
            params.d()
        )));
    }
    let point = DataSet::new(
        DMatrix::from_row_slice(1, x.len(), x.as_slice()),
        DMatrix::from_row_slice(1, y.len(), y.as_slice()),
    )?;
    let gate = gating_log_terms(point.x(), params)?;
    let gate_norm = log_sum_exp(gate.row(0).iter().copied());
    let expert = expert_log_terms(&point, params)?;
    Ok(log_sum_exp((0..params.k()).map(|k| gate[(0, k)] - gate_norm + expert[(0, k)])))
}

/// Joint log-likelihood `sum_i log f(x_i, y_i)`.
pub fn joint_loglik(data: &DataSet, params: &MoggeParams) -> Result<f64> {
    let terms = joint_log_terms(data, params)?;
    Ok(terms.row_iter().map(|row| log_sum_exp(row.iter().copied())).sum())
}

/// Joint log-likelihood minus `lambda * sum ||beta_k||_1 + gamma * sum ||mu_k||_1`.
pub fn penalized_loglik(data: &DataSet, params: &MoggeParams, lambda: f64, gamma: f64) -> Result<f64> {
    check_penalized_config(params)?;
    if !(lambda >= 0.0 && gamma >= 0.0) {
        return Err(MoggeError::InvalidArgument(format!(
            "penalties must be non-negative, got lambda = {lambda}, gamma = {gamma}"
        )));
    }
    let loglik = joint_loglik(data, params)?;
    Ok(loglik - penalty_value(params, lambda, gamma))
}

pub(crate) fn penalty_value(params: &MoggeParams, lambda: f64, gamma: f64) -> f64 {
    let (beta, mu) = params.l1_norms();
    lambda * beta + gamma * mu
}

pub(crate) fn check_penalized_config(params: &MoggeParams) -> Result<()> {
    if params.d() != 1 {
        return Err(MoggeError::Unsupported(format!(
            "penalized estimation requires a univariate response, got d = {}",
            params.d()
        )));
    }
    if !params.has_diagonal_gating() {
        return Err(MoggeError::Unsupported(
            "penalized estimation requires diagonal gating covariances".into(),
        ));
    }
    Ok(())
}

/// Posterior probabilities `tau_ik` that pair i was generated by component k.
pub fn posterior_responsibilities(data: &DataSet, params: &MoggeParams) -> Result<Responsibilities> {
    Ok(e_step(data, params)?.0)
}

/// Responsibilities and the joint log-likelihood from one pass.
pub fn e_step(data: &DataSet, params: &MoggeParams) -> Result<(Responsibilities, f64)> {
    let terms = joint_log_terms(data, params)?;
    Ok(normalize_rows(&terms))
}
