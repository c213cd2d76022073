use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::linalg::{center_columns, column_means, pivoted_qr};
use super::stats::{assemble_fit, total_sum_of_squares};
use crate::error::{HvsError, Result};
use crate::model::ModelFit;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OlsOptions {
    pub with_intercept: bool,
    /// Accept `rows ≤ columns` and return the minimum-norm solution.
    pub min_norm: bool,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            with_intercept: true,
            min_norm: false,
        }
    }
}

/// Ordinary least squares through a column-pivoted QR factorization.
///
/// With an intercept the slopes are solved on centered data, so the
/// intercept is never the column flagged as dependent. Dependent columns
/// get coefficient 0 and are listed in `ModelFit::deficient`.
pub fn fit_ols(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ids: &[String],
    opts: OlsOptions,
) -> Result<ModelFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(HvsError::DimensionMismatch(format!(
            "{n} design rows for {} responses",
            y.len()
        )));
    }
    if ids.len() != p {
        return Err(HvsError::DimensionMismatch(format!("{} ids for {p} columns", ids.len())));
    }
    let params = p + usize::from(opts.with_intercept);
    if n <= params {
        if opts.min_norm {
            return fit_min_norm(x, y, ids, opts);
        }
        return Err(HvsError::InsufficientObservations { rows: n, cols: params });
    }

    let (xs, ys, xmeans, ymean) = if opts.with_intercept {
        let xm = column_means(x);
        let ym = y.mean();
        (center_columns(x, &xm), y.add_scalar(-ym), Some(xm), ym)
    } else {
        (x.clone(), y.clone(), None, 0.0)
    };

    let qr = pivoted_qr(&xs);
    let beta = qr.solve(&ys);
    let intercept = match &xmeans {
        Some(xm) => ymean - xm.dot(&beta),
        None => 0.0,
    };
    let fitted = x * &beta;
    let fitted = fitted.add_scalar(intercept);

    let deficient: Vec<String> = qr.dependent().iter().map(|&j| ids[j].clone()).collect();
    let coefficients: BTreeMap<String, f64> = ids
        .iter()
        .enumerate()
        .map(|(j, id)| (id.clone(), beta[j]))
        .collect();
    let k = qr.rank + usize::from(opts.with_intercept);
    assemble_fit(intercept, coefficients, y, &fitted, k, false, false, deficient)
}

fn fit_min_norm(x: &DMatrix<f64>, y: &DVector<f64>, ids: &[String], opts: OlsOptions) -> Result<ModelFit> {
    let (xs, ys, xmeans, ymean) = if opts.with_intercept {
        let xm = column_means(x);
        let ym = y.mean();
        (center_columns(x, &xm), y.add_scalar(-ym), Some(xm), ym)
    } else {
        (x.clone(), y.clone(), None, 0.0)
    };
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd
        .solve(&ys, eps)
        .map_err(|e| HvsError::InvalidInput(e.to_string()))?;
    let intercept = xmeans.map_or(0.0, |xm| ymean - xm.dot(&beta));
    let fitted = (x * &beta).add_scalar(intercept);
    let residuals: Vec<f64> = (y - &fitted).iter().copied().collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let tss = total_sum_of_squares(y.as_slice());
    let n = y.len();
    let k = rank + usize::from(opts.with_intercept);
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    Ok(ModelFit {
        intercept,
        coefficients: ids.iter().cloned().zip(beta.iter().copied()).collect(),
        residuals,
        n,
        k,
        rss,
        tss,
        r2,
        adj_r2: if n > k { 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - k) as f64 } else { f64::NAN },
        aic: super::stats::aic(n, k, rss),
        bic: super::stats::bic(n, k, rss),
        pct_dev: r2,
        standardized: false,
        penalized: false,
        deficient: Vec::new(),
    })
}

/// Predictions of a fit whose coefficients are in the units of `x`.
pub fn predict(fit: &ModelFit, x: &DMatrix<f64>, ids: &[String]) -> DVector<f64> {
    let beta = DVector::from_iterator(ids.len(), ids.iter().map(|id| fit.coefficient(id)));
    (x * beta).add_scalar(fit.intercept)
}
