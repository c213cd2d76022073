//! Ridge regression with the penalty chosen by k-fold cross-validation.
//!
//! Objective per fit: `rss + λ·Σβ²` over standardized predictors with an
//! unpenalized intercept. Each fold re-centers its training rows, so the
//! intercept stays out of the penalty inside folds as well.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cv::CvPlan;
use super::linalg::{center_columns, column_means};
use super::standardize::{zero_variance_columns, StandardizationParams};
use super::stats::{assemble_fit, total_sum_of_squares};
use crate::error::{HvsError, Result};
use crate::model::ModelFit;

/// Ratio between the largest default penalty and `max|Zᵀy|`.
const LAMBDA_MAX_SCALE: f64 = 1000.0;
/// Ratio between the smallest default penalty and `max|Zᵀy|/n`.
const LAMBDA_MIN_SCALE: f64 = 1e-4;
const DEFAULT_GRID_LEN: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeDf {
    /// `k = selected + 1`.
    #[default]
    SelectedCount,
    /// `k = tr(H) + 1`, the effective degrees of freedom of the smoother.
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub mean_mse: f64,
    pub fold_mse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    /// Fit with coefficients on standardized predictors.
    pub fit: ModelFit,
    pub raw_intercept: f64,
    pub raw_coefficients: BTreeMap<String, f64>,
    pub params: StandardizationParams,
    pub lambda_star: f64,
    pub cv_curve: Vec<CvPoint>,
    pub effective_df: f64,
    /// Columns left out because they have zero variance.
    pub excluded: Vec<String>,
}

impl RidgeFit {
    /// Predictions from raw-unit columns ordered like the fitted ids.
    pub fn predict(&self, x: &DMatrix<f64>, ids: &[String]) -> DVector<f64> {
        let beta = DVector::from_iterator(
            ids.len(),
            ids.iter().map(|id| self.raw_coefficients.get(id).copied().unwrap_or(0.0)),
        );
        (x * beta).add_scalar(self.raw_intercept)
    }
}

/// Thin SVD of a centered design, reused across a penalty grid.
pub(crate) struct SvdSystem {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl SvdSystem {
    pub(crate) fn new(z: &DMatrix<f64>) -> Self {
        let svd = z.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v_t requested").transpose();
        Self {
            u,
            s: svd.singular_values,
            v,
        }
    }

    fn cutoff(&self) -> f64 {
        let dim = self.u.nrows().max(self.v.nrows()) as f64;
        self.s.max() * dim * f64::EPSILON
    }

    /// Ridge solution `(ZᵀZ + λI)⁻¹Zᵀy`; at `λ = 0` the minimum-norm
    /// least-squares solution.
    pub(crate) fn solve(&self, uty: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let cut = self.cutoff();
        let w = DVector::from_iterator(
            self.s.len(),
            self.s.iter().zip(uty.iter()).map(|(&s, &b)| {
                if s <= cut {
                    0.0
                } else {
                    s * b / (s * s + lambda)
                }
            }),
        );
        &self.v * w
    }

    pub(crate) fn uty(&self, y: &DVector<f64>) -> DVector<f64> {
        self.u.transpose() * y
    }

    pub(crate) fn effective_df(&self, lambda: f64) -> f64 {
        let cut = self.cutoff();
        self.s
            .iter()
            .filter(|&&s| s > cut)
            .map(|&s| s * s / (s * s + lambda))
            .sum()
    }
}

/// 100 log-spaced penalties, ascending, from `1e-4·max|Zᵀy|/n` (close to
/// least squares) up to `1000·max|Zᵀy|` (close to the mean), on
/// standardized `Z` and centered `y`.
pub fn default_ridge_grid(z: &DMatrix<f64>, yc: &DVector<f64>) -> Vec<f64> {
    let scale = (z.transpose() * yc).amax();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let lo = LAMBDA_MIN_SCALE * scale / z.nrows().max(1) as f64;
    log_grid(lo, LAMBDA_MAX_SCALE * scale, DEFAULT_GRID_LEN)
}

pub fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..len)
        .map(|i| (a + (b - a) * i as f64 / (len - 1) as f64).exp())
        .collect()
}

fn fold_curve(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    plan: &CvPlan,
) -> Result<Vec<CvPoint>> {
    let n = z.nrows();
    let splits = plan.splits(n)?;
    let mut fold_mse = vec![Vec::with_capacity(splits.len()); grid.len()];
    for (train, test) in &splits {
        if train.len() < 2 {
            return Err(HvsError::FoldTooSmall {
                fold: 0,
                rows: train.len(),
            });
        }
        let ztr = z.select_rows(train);
        let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let means = column_means(&ztr);
        let ymean = ytr.mean();
        let sys = SvdSystem::new(&center_columns(&ztr, &means));
        let uty = sys.uty(&ytr.add_scalar(-ymean));
        let zte = center_columns(&z.select_rows(test), &means);
        for (li, &lambda) in grid.iter().enumerate() {
            let beta = sys.solve(&uty, lambda);
            let pred = (&zte * &beta).add_scalar(ymean);
            let mse = test
                .iter()
                .enumerate()
                .map(|(r, &i)| (y[i] - pred[r]).powi(2))
                .sum::<f64>()
                / test.len() as f64;
            fold_mse[li].push(mse);
        }
    }
    Ok(grid
        .iter()
        .zip(fold_mse)
        .map(|(&lambda, f)| CvPoint {
            lambda,
            mean_mse: f.iter().sum::<f64>() / f.len() as f64,
            fold_mse: f,
        })
        .collect())
}

/// Index of the minimal mean MSE; ties go to the larger penalty.
pub(crate) fn argmin_prefer_larger(curve: &[CvPoint]) -> usize {
    let mut best = 0;
    for (i, pt) in curve.iter().enumerate() {
        if pt.mean_mse <= curve[best].mean_mse {
            best = i;
        }
    }
    best
}

pub fn fit_ridge_cv(
    x: &DMatrix<f64>,
    ids: &[String],
    y: &DVector<f64>,
    grid: Option<&[f64]>,
    plan: &CvPlan,
    df: RidgeDf,
) -> Result<RidgeFit> {
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
    let excluded: Vec<String> = dropped.iter().map(|&j| ids[j].clone()).collect();
    for id in &excluded {
        warn!("ridge: excluding zero-variance column `{id}`");
    }
    let keep: Vec<usize> = (0..p).filter(|j| !dropped.contains(j)).collect();
    let kept_ids: Vec<String> = keep.iter().map(|&j| ids[j].clone()).collect();
    let xk = x.select_columns(&keep);

    let params = StandardizationParams::fit(&xk, &kept_ids, y)?;
    let z = params.transform(&xk);
    let yc = y.add_scalar(-params.y_center);

    let grid: Vec<f64> = match grid {
        Some(g) => {
            if g.is_empty() {
                return Err(HvsError::InvalidInput("empty penalty grid".into()));
            }
            if g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return Err(HvsError::InvalidInput("penalties must be finite and ≥ 0".into()));
            }
            if g.windows(2).any(|w| w[0] > w[1]) {
                return Err(HvsError::InvalidInput("penalty grid must be sorted ascending".into()));
            }
            g.to_vec()
        }
        None => default_ridge_grid(&z, &yc),
    };

    let cv_curve = fold_curve(&z, y, &grid, plan)?;
    let lambda_star = cv_curve[argmin_prefer_larger(&cv_curve)].lambda;

    let sys = SvdSystem::new(&z);
    let beta = sys.solve(&sys.uty(&yc), lambda_star);
    let effective_df = sys.effective_df(lambda_star);
    let fitted = (&z * &beta).add_scalar(params.y_center);

    let mut coefficients: BTreeMap<String, f64> =
        kept_ids.iter().cloned().zip(beta.iter().copied()).collect();
    let (raw_intercept, raw) = params.destandardize(params.y_center, &beta);
    let mut raw_coefficients: BTreeMap<String, f64> =
        kept_ids.iter().cloned().zip(raw.iter().copied()).collect();
    for id in &excluded {
        coefficients.insert(id.clone(), 0.0);
        raw_coefficients.insert(id.clone(), 0.0);
    }

    let k = kept_ids.len() + 1;
    let mut fit = assemble_fit(
        params.y_center,
        coefficients,
        y,
        &fitted,
        k,
        lambda_star > 0.0,
        true,
        Vec::new(),
    )?;
    if df == RidgeDf::Effective {
        let k_eff = effective_df + 1.0;
        let nf = n as f64;
        if fit.rss > 0.0 {
            fit.aic = Some(nf * (fit.rss / nf).ln() + 2.0 * k_eff);
            fit.bic = Some(nf * (fit.rss / nf).ln() + k_eff * nf.ln());
        }
        fit.adj_r2 = 1.0 - (1.0 - fit.r2) * (nf - 1.0) / (nf - k_eff);
    }

    Ok(RidgeFit {
        fit,
        raw_intercept,
        raw_coefficients,
        params,
        lambda_star,
        cv_curve,
        effective_df,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::ols::{fit_ols, OlsOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| rng.sample::<f64, _>(StandardNormal) * (j + 1) as f64 + j as f64);
        let y = DVector::from_fn(n, |i, _| {
            1.5 + (0..p).map(|j| x[(i, j)] * (j as f64 - 1.0) * 0.3).sum::<f64>()
                + rng.sample::<f64, _>(StandardNormal)
        });
        (x, y, (0..p).map(|j| format!("x{j}")).collect())
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y, ids) = problem(1, 60, 4);
        let r = fit_ridge_cv(&x, &ids, &y, Some(&[0.0]), &CvPlan::default(), RidgeDf::SelectedCount).unwrap();
        let ols = fit_ols(&x, &y, &ids, OlsOptions::default()).unwrap();
        for id in &ids {
            assert!((r.raw_coefficients[id] - ols.coefficient(id)).abs() < 1e-6);
        }
        assert!((r.raw_intercept - ols.intercept).abs() < 1e-6);
        assert!((r.fit.rss - ols.rss).abs() < 1e-6);
    }

    #[test]
    fn huge_penalty_shrinks_to_mean() {
        let (x, y, ids) = problem(2, 50, 3);
        let r = fit_ridge_cv(&x, &ids, &y, Some(&[1e9]), &CvPlan::default(), RidgeDf::SelectedCount).unwrap();
        for b in r.fit.coefficients.values() {
            assert!(b.abs() < 1e-4);
        }
        assert!((r.fit.intercept - y.mean()).abs() < 1e-12);
    }

    #[test]
    fn identical_columns_share_weight() {
        let (x0, y, _) = problem(3, 40, 1);
        let x = DMatrix::from_fn(40, 2, |i, _| x0[(i, 0)]);
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = fit_ridge_cv(&x, &ids, &y, Some(&[1.0]), &CvPlan::default(), RidgeDf::SelectedCount).unwrap();
        assert!((r.fit.coefficients["a"] - r.fit.coefficients["b"]).abs() < 1e-8);
    }

    #[test]
    fn destandardized_predictions_match_standardized() {
        let (x, y, ids) = problem(4, 80, 5);
        let r = fit_ridge_cv(&x, &ids, &y, None, &CvPlan::default(), RidgeDf::SelectedCount).unwrap();
        let pred = r.predict(&x, &ids);
        let fitted: Vec<f64> = y.iter().zip(&r.fit.residuals).map(|(a, e)| a - e).collect();
        for (a, b) in pred.iter().zip(&fitted) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn curve_is_deterministic() {
        let (x, y, ids) = problem(5, 70, 6);
        let plan = CvPlan::new(5, 99).unwrap();
        let a = fit_ridge_cv(&x, &ids, &y, None, &plan, RidgeDf::SelectedCount).unwrap();
        let b = fit_ridge_cv(&x, &ids, &y, None, &plan, RidgeDf::SelectedCount).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn penalized_pct_dev_below_ols() {
        let (x, y, ids) = problem(6, 70, 6);
        let r = fit_ridge_cv(&x, &ids, &y, None, &CvPlan::default(), RidgeDf::SelectedCount).unwrap();
        let ols = fit_ols(&x, &y, &ids, OlsOptions::default()).unwrap();
        assert!(r.fit.pct_dev <= ols.pct_dev + 1e-9);
    }

    #[test]
    fn unsorted_grid_rejected() {
        let (x, y, ids) = problem(7, 30, 2);
        assert!(fit_ridge_cv(&x, &ids, &y, Some(&[2.0, 1.0]), &CvPlan::default(), RidgeDf::SelectedCount).is_err());
    }

    #[test]
    fn effective_df_between_zero_and_p() {
        let (x, y, ids) = problem(8, 50, 4);
        let r = fit_ridge_cv(&x, &ids, &y, None, &CvPlan::default(), RidgeDf::Effective).unwrap();
        assert!(r.effective_df > 0.0 && r.effective_df <= 4.0 + 1e-12);
    }
}
