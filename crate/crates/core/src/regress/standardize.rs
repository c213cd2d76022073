use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};

/// Per-column centering and scaling (sample standard deviation, divisor
/// `n − 1`) plus the response centering constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub ids: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub y_center: f64,
}

pub fn sample_sd(col: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = col.clone().count() as f64;
    let mean = col.clone().sum::<f64>() / n;
    let ss: f64 = col.map(|v| (v - mean) * (v - mean)).sum();
    let sd = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Columns whose sample standard deviation is zero (or numerically so).
pub fn zero_variance_columns(x: &DMatrix<f64>) -> Vec<usize> {
    x.column_iter()
        .enumerate()
        .filter(|(_, c)| {
            let (m, sd) = sample_sd(c.iter().copied());
            sd <= 1e-12 * m.abs().max(1.0)
        })
        .map(|(j, _)| j)
        .collect()
}

impl StandardizationParams {
    pub fn fit(x: &DMatrix<f64>, ids: &[String], y: &DVector<f64>) -> Result<Self> {
        if ids.len() != x.ncols() {
            return Err(HvsError::DimensionMismatch(format!(
                "{} ids for {} columns",
                ids.len(),
                x.ncols()
            )));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for (j, c) in x.column_iter().enumerate() {
            let (m, sd) = sample_sd(c.iter().copied());
            if sd <= 1e-12 * m.abs().max(1.0) {
                return Err(HvsError::ZeroVariance(ids[j].clone()));
            }
            means.push(m);
            sds.push(sd);
        }
        Ok(Self {
            ids: ids.to_vec(),
            means,
            sds,
            y_center: y.mean(),
        })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.means[j]);
            col /= self.sds[j];
        }
        z
    }

    /// Converts a model `y = a + Σ b_j z_j` on standardized columns into
    /// raw-unit form `y = a' + Σ b'_j x_j`.
    pub fn destandardize(&self, intercept: f64, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let raw = DVector::from_iterator(beta.len(), beta.iter().zip(&self.sds).map(|(b, s)| b / s));
        let shift: f64 = raw.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        (intercept - shift, raw)
    }
}
