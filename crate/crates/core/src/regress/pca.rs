use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::standardize::StandardizationParams;
use crate::error::{HvsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ComponentRule {
    /// Smallest count whose cumulative explained-variance ratio reaches
    /// the target.
    VarianceTarget(f64),
    FixedCount(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// `p × c` loadings, one component per column.
    pub loadings: DMatrix<f64>,
    /// `n × c` component scores.
    pub scores: DMatrix<f64>,
    /// Explained-variance ratio of every nonzero component, descending.
    pub explained_ratio: Vec<f64>,
    pub n_components: usize,
    pub rank: usize,
    pub params: StandardizationParams,
    all_loadings: DMatrix<f64>,
    all_scores: DMatrix<f64>,
}

impl PcaResult {
    /// Rebuilds the standardized matrix from every nonzero component.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.all_scores * self.all_loadings.transpose()
    }

    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratio[..self.n_components].iter().sum()
    }
}

/// Principal components of the column-standardized matrix via SVD.
/// Each loading vector is signed so that its largest-magnitude entry is
/// positive.
pub fn pca_components(x: &DMatrix<f64>, ids: &[String], rule: ComponentRule) -> Result<PcaResult> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(HvsError::InsufficientObservations { rows: n, cols: p });
    }
    let params = StandardizationParams::fit(x, ids, &DVector::zeros(n))?;
    let z = params.transform(x);

    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cut = smax * n.max(p) as f64 * f64::EPSILON * 4.0;
    let order: Vec<usize> = order.into_iter().filter(|&i| s[i] > cut).collect();
    let rank = order.len();

    let total: f64 = order.iter().map(|&i| s[i] * s[i]).sum();
    let explained_ratio: Vec<f64> = order.iter().map(|&i| s[i] * s[i] / total).collect();

    let n_components = match rule {
        ComponentRule::FixedCount(c) => {
            if c > rank {
                return Err(HvsError::RankExceeded { requested: c, rank });
            }
            c
        }
        ComponentRule::VarianceTarget(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(HvsError::InvalidInput(format!("variance target {t} outside (0, 1]")));
            }
            let mut cum = 0.0;
            let mut c = rank;
            for (i, r) in explained_ratio.iter().enumerate() {
                cum += r;
                if cum >= t - 1e-12 {
                    c = i + 1;
                    break;
                }
            }
            c
        }
    };

    let mut all_loadings = DMatrix::zeros(p, rank);
    let mut all_scores = DMatrix::zeros(n, rank);
    for (c, &i) in order.iter().enumerate() {
        let mut v = vt.row(i).transpose();
        let mut lead = 0;
        for j in 1..p {
            if v[j].abs() > v[lead].abs() {
                lead = j;
            }
        }
        let mut uc = u.column(i) * s[i];
        if v[lead] < 0.0 {
            v = -v;
            uc = -uc;
        }
        all_loadings.set_column(c, &v);
        all_scores.set_column(c, &uc);
    }

    Ok(PcaResult {
        loadings: all_loadings.columns(0, n_components).clone_owned(),
        scores: all_scores.columns(0, n_components).clone_owned(),
        explained_ratio,
        n_components,
        rank,
        params,
        all_loadings,
        all_scores,
    })
}

/// Scores for new rows given a fitted PCA.
pub fn project(pca: &PcaResult, x: &DMatrix<f64>) -> DMatrix<f64> {
    pca.params.transform(x) * &pca.loadings
}
