//! Goodness-of-fit statistics.
//!
//! Conventions: `k` counts every estimated coefficient including the
//! intercept; `aic = n·ln(rss/n) + 2k`; `bic = n·ln(rss/n) + k·ln(n)`;
//! `pct_dev = 1 − rss/rss_null` where the null model is intercept-only,
//! which makes it identical to R² for least-squares fits.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{HvsError, Result};
use crate::model::ModelFit;

/// Residual sums of squares below this fraction of the total are treated
/// as an exact fit by the selection criterion.
const EXACT_FIT_REL: f64 = 1e-20;

pub fn aic(n: usize, k: usize, rss: f64) -> Option<f64> {
    (rss > 0.0).then(|| n as f64 * (rss / n as f64).ln() + 2.0 * k as f64)
}

pub fn bic(n: usize, k: usize, rss: f64) -> Option<f64> {
    (rss > 0.0).then(|| n as f64 * (rss / n as f64).ln() + k as f64 * (n as f64).ln())
}

/// AIC used to rank candidate models during stepwise search. Finite even
/// for exact fits so that comparisons stay well defined.
pub(crate) fn selection_aic(n: usize, k: usize, rss: f64, tss: f64) -> f64 {
    let floor = (tss * EXACT_FIT_REL).max(f64::MIN_POSITIVE);
    n as f64 * (rss.max(floor) / n as f64).ln() + 2.0 * k as f64
}

pub fn total_sum_of_squares(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Recomputes every statistic of `fit` from its residuals, `n`, `k` and
/// `tss`.
pub fn fit_stats(mut fit: ModelFit) -> Result<ModelFit> {
    if fit.residuals.len() != fit.n {
        return Err(HvsError::DimensionMismatch(format!(
            "{} residuals for n = {}",
            fit.residuals.len(),
            fit.n
        )));
    }
    if fit.tss <= 0.0 {
        return Err(HvsError::ZeroTotalVariance);
    }
    if fit.n <= fit.k {
        return Err(HvsError::InsufficientObservations {
            rows: fit.n,
            cols: fit.k,
        });
    }
    let n = fit.n as f64;
    let rss: f64 = fit.residuals.iter().map(|r| r * r).sum();
    fit.rss = rss;
    fit.r2 = 1.0 - rss / fit.tss;
    fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (n - 1.0) / (n - fit.k as f64);
    fit.aic = aic(fit.n, fit.k, rss);
    fit.bic = bic(fit.n, fit.k, rss);
    fit.pct_dev = 1.0 - rss / fit.tss;
    Ok(fit)
}

/// Builds a fit record from predictions and runs [`fit_stats`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_fit(
    intercept: f64,
    coefficients: BTreeMap<String, f64>,
    y: &DVector<f64>,
    fitted: &DVector<f64>,
    k: usize,
    penalized: bool,
    standardized: bool,
    deficient: Vec<String>,
) -> Result<ModelFit> {
    let residuals: Vec<f64> = (y - fitted).iter().copied().collect();
    let fit = ModelFit {
        intercept,
        coefficients,
        residuals,
        n: y.len(),
        k,
        rss: 0.0,
        tss: total_sum_of_squares(y.as_slice()),
        r2: 0.0,
        adj_r2: 0.0,
        aic: None,
        bic: None,
        pct_dev: 0.0,
        standardized,
        penalized,
        deficient,
    };
    fit_stats(fit)
}

/// Intercept-only model. Unlike [`fit_stats`] this accepts a constant
/// response, reporting zero R² and no information criteria.
pub fn null_fit(y: &[f64]) -> ModelFit {
    let n = y.len();
    let m = y.iter().sum::<f64>() / n as f64;
    let residuals: Vec<f64> = y.iter().map(|v| v - m).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    ModelFit {
        intercept: m,
        coefficients: BTreeMap::new(),
        residuals,
        n,
        k: 1,
        rss,
        tss: rss,
        r2: 0.0,
        adj_r2: 0.0,
        aic: aic(n, 1, rss),
        bic: bic(n, 1, rss),
        pct_dev: 0.0,
        standardized: false,
        penalized: false,
        deficient: Vec::new(),
    }
}
