//! Mixtures of Gaussian-gated experts for regression and model-based clustering.
//!
//! The model couples a Gaussian mixture on the predictors (the gating
//! network) with per-component Gaussian linear regressions (the experts).
//! Parameters are estimated by maximizing the joint log-likelihood of
//! `(x, y)`, either with plain EM ([`fit_em`]) or with an l1-penalized EM whose
//! M-step runs coordinate ascent on the gating means and expert coefficients
//! ([`fit_em_lasso`]). [`grid_search`] picks the number of components and the
//! penalty levels by a modified BIC.

pub mod em;
pub mod error;
pub mod io;
pub mod lasso;
pub mod metrics;
pub mod model;
pub mod path;
pub mod select;
pub mod simulate;

pub use em::{fit_em, fit_em_from, init_params, FitOptions, FitResult, InitStrategy};
pub use error::{MoggeError, Result};
pub use lasso::{fit_em_lasso, fit_em_lasso_from, soft_threshold, PenaltyConfig};
pub use metrics::{
    adjusted_rand_index, bayes_labels, best_permutation, classification_rate, sensitivity_specificity,
    BlockScore, MeanSd, SparsityReport,
};
pub use model::{
    conditional_density, gating_probs, gaussian_logpdf, joint_loglik, penalized_loglik,
    posterior_responsibilities, Covariance, CovarianceKind, DataSet, ExpertComponent,
    GatingComponent, MoggeParams, Responsibilities,
};
pub use path::{full_shrinkage_penalty, lasso_path, PathBlocks, PathPoint, PathRow};
pub use select::{count_df, fit_warm_or_cold, grid_rows, grid_search, modified_bic, GridSpec, SearchOptions, SelectionRow, SelectionTable};
pub use simulate::{default_scenario, sample_dataset, sample_replicate, InterceptConvention, Scenario};
