//! Lasso by cyclic coordinate descent, penalty chosen by k-fold CV.
//!
//! Objective: `rss/(2n) + λ·Σ|β|` on standardized predictors and a
//! centered response.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::CvPlan;
use super::linalg::{center_columns, column_means};
use super::ridge::{argmin_prefer_larger, log_grid, CvPoint};
use super::standardize::{zero_variance_columns, StandardizationParams};
use super::stats::{assemble_fit, null_fit, total_sum_of_squares};
use crate::error::{HvsError, Result};
use crate::model::ModelFit;

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(z: &DMatrix<f64>, yc: &DVector<f64>) -> f64 {
    (z.transpose() * yc).amax() / z.nrows() as f64
}

/// Solves one lasso problem on centered `z`, `yc`. `warm` seeds the
/// coordinates. Returns the coefficients and the sweeps used.
pub fn coordinate_descent(
    z: &DMatrix<f64>,
    yc: &DVector<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, usize)> {
    let (n, p) = z.shape();
    let nf = n as f64;
    let col_sq: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut beta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    let mut resid = yc - z * &beta;
    let mut max_delta = f64::INFINITY;
    for sweep in 1..=LASSO_MAX_SWEEPS {
        max_delta = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = z.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < LASSO_TOL {
            return Ok((beta, sweep));
        }
    }
    Err(HvsError::NotConverged {
        sweeps: LASSO_MAX_SWEEPS,
        achieved: max_delta,
    })
}

/// Solutions along a descending penalty path with warm starts.
fn path(z: &DMatrix<f64>, yc: &DVector<f64>, desc: &[f64]) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(desc.len());
    let mut warm: Option<DVector<f64>> = None;
    for &l in desc {
        let (b, _) = coordinate_descent(z, yc, l, warm.as_ref())?;
        warm = Some(b.clone());
        out.push(b);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Fit with coefficients on standardized predictors.
    pub fit: ModelFit,
    pub raw_intercept: f64,
    pub raw_coefficients: BTreeMap<String, f64>,
    pub params: StandardizationParams,
    pub lambda_star: f64,
    pub cv_curve: Vec<CvPoint>,
    pub selected: Vec<String>,
}

/// 100 log-spaced penalties, ascending, up to `max|Zᵀy|/n`. The lower end
/// is `1e-2·λmax` when columns outnumber rows, else `1e-4·λmax`.
pub fn default_lasso_grid(z: &DMatrix<f64>, yc: &DVector<f64>) -> Vec<f64> {
    let lmax = lambda_max(z, yc);
    let lmax = if lmax > 0.0 { lmax } else { 1.0 };
    let ratio = if z.nrows() < z.ncols() { 1e-2 } else { 1e-4 };
    log_grid(lmax * ratio, lmax, 100)
}

pub fn fit_lasso_cv(
    x: &DMatrix<f64>,
    ids: &[String],
    y: &DVector<f64>,
    grid: Option<&[f64]>,
    plan: &CvPlan,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if y.len() != n || ids.len() != p {
        return Err(HvsError::DimensionMismatch(format!(
            "{n}×{p} design, {} responses, {} ids",
            y.len(),
            ids.len()
        )));
    }
    if total_sum_of_squares(y.as_slice()) <= 0.0 {
        return Err(HvsError::ZeroTotalVariance);
    }
    let dropped = zero_variance_columns(x);
    for &j in &dropped {
        warn!("lasso: excluding zero-variance column `{}`", ids[j]);
    }
    let keep: Vec<usize> = (0..p).filter(|j| !dropped.contains(j)).collect();
    let kept_ids: Vec<String> = keep.iter().map(|&j| ids[j].clone()).collect();
    let xk = x.select_columns(&keep);
    let params = StandardizationParams::fit(&xk, &kept_ids, y)?;
    let z = params.transform(&xk);
    let yc = y.add_scalar(-params.y_center);

    let grid: Vec<f64> = match grid {
        Some([]) => return Err(HvsError::InvalidInput("empty penalty grid".into())),
        Some(g) => {
            let mut g = g.to_vec();
            g.sort_by(f64::total_cmp);
            g
        }
        None => default_lasso_grid(&z, &yc),
    };
    let desc: Vec<f64> = grid.iter().rev().copied().collect();

    let splits = plan.splits(n)?;
    let mut fold_mse = vec![Vec::with_capacity(splits.len()); grid.len()];
    for (train, test) in &splits {
        let ztr = z.select_rows(train);
        let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let means = column_means(&ztr);
        let ymean = ytr.mean();
        let betas = path(&center_columns(&ztr, &means), &ytr.add_scalar(-ymean), &desc)?;
        let zte = center_columns(&z.select_rows(test), &means);
        for (di, beta) in betas.iter().enumerate() {
            let pred = (&zte * beta).add_scalar(ymean);
            let mse = test
                .iter()
                .enumerate()
                .map(|(r, &i)| (y[i] - pred[r]).powi(2))
                .sum::<f64>()
                / test.len() as f64;
            fold_mse[grid.len() - 1 - di].push(mse);
        }
    }
    let cv_curve: Vec<CvPoint> = grid
        .iter()
        .zip(fold_mse)
        .map(|(&lambda, f)| CvPoint {
            lambda,
            mean_mse: f.iter().sum::<f64>() / f.len() as f64,
            fold_mse: f,
        })
        .collect();
    let lambda_star = cv_curve[argmin_prefer_larger(&cv_curve)].lambda;

    let upto: Vec<f64> = desc.iter().copied().filter(|&l| l >= lambda_star).collect();
    let beta = path(&z, &yc, &upto)?.pop().unwrap_or_else(|| DVector::zeros(kept_ids.len()));

    let selected: Vec<String> = kept_ids
        .iter()
        .zip(beta.iter())
        .filter(|(_, b)| **b != 0.0)
        .map(|(id, _)| id.clone())
        .collect();
    let mut coefficients: BTreeMap<String, f64> =
        kept_ids.iter().cloned().zip(beta.iter().copied()).collect();
    let (raw_intercept, raw) = params.destandardize(params.y_center, &beta);
    let mut raw_coefficients: BTreeMap<String, f64> =
        kept_ids.iter().cloned().zip(raw.iter().copied()).collect();
    for &j in &dropped {
        coefficients.insert(ids[j].clone(), 0.0);
        raw_coefficients.insert(ids[j].clone(), 0.0);
    }

    let fit = if selected.is_empty() {
        let mut f = null_fit(y.as_slice());
        f.standardized = true;
        f.penalized = true;
        f.coefficients = coefficients;
        f
    } else {
        let fitted = (&z * &beta).add_scalar(params.y_center);
        assemble_fit(
            params.y_center,
            coefficients,
            y,
            &fitted,
            selected.len() + 1,
            true,
            true,
            Vec::new(),
        )?
    };

    Ok(LassoFit {
        fit,
        raw_intercept,
        raw_coefficients,
        params,
        lambda_star,
        cv_curve,
        selected,
    })
}
