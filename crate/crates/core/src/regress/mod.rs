//! Linear-model engine: least squares, fit statistics, diagnostics,
//! stepwise selection, ridge, lasso and principal components.

pub mod cv;
pub mod diagnostics;
pub mod lasso;
pub mod linalg;
pub mod ols;
pub mod pca;
pub mod ridge;
pub mod standardize;
pub mod stats;
pub mod stepwise;

pub use cv::CvPlan;
pub use diagnostics::{jarque_bera, JarqueBera};
pub use lasso::{fit_lasso_cv, LassoFit};
pub use ols::{fit_ols, OlsOptions};
pub use pca::{pca_components, ComponentRule, PcaResult};
pub use ridge::{fit_ridge_cv, RidgeDf, RidgeFit};
pub use standardize::StandardizationParams;
pub use stats::{fit_stats, null_fit};
pub use stepwise::{stepwise_aic, StepwiseConfig, StepwiseStart};
