//! Competing selectors fitted on the same preprocessed rows as the
//! hierarchical pipeline, each reduced to a linear predictor in raw units.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};
use crate::hvs::{HvsConfig, HvsResult};
use crate::model::{HierarchyTree, ModelFit, PanelDataset, Stage};
use crate::regress::standardize::zero_variance_columns;
use crate::regress::{fit_lasso_cv, fit_ols, null_fit, pca_components, stepwise_aic, ComponentRule, OlsOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Principal components reaching 80% explained variance.
    PcaVariance,
    /// As many principal components as the hierarchical selection keeps.
    PcaMatched,
    /// One stepwise AIC pass over every candidate.
    StepwiseAll,
    Lasso,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::PcaVariance,
        BenchmarkKind::PcaMatched,
        BenchmarkKind::StepwiseAll,
        BenchmarkKind::Lasso,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BenchmarkKind::PcaVariance => "pca_80",
            BenchmarkKind::PcaMatched => "pca_matched",
            BenchmarkKind::StepwiseAll => "stepwise_all",
            BenchmarkKind::Lasso => "lasso",
        }
    }
}

pub const PCA_VARIANCE_TARGET: f64 = 0.8;

/// `intercept + Σ coefficient · column`, in the panel's own units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl LinearPredictor {
    pub fn constant(v: f64) -> Self {
        Self {
            intercept: v,
            coefficients: BTreeMap::new(),
        }
    }

    pub fn predict(&self, data: &PanelDataset) -> Result<Vec<f64>> {
        let ids: Vec<&String> = self.coefficients.keys().collect();
        let mut out = vec![self.intercept; data.n_rows()];
        if ids.is_empty() {
            return Ok(out);
        }
        let x = data.design_matrix(&ids)?;
        for (j, id) in ids.iter().enumerate() {
            let b = self.coefficients[*id];
            for (i, o) in out.iter_mut().enumerate() {
                *o += b * x[(i, j)];
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFit {
    pub label: String,
    /// Variables (or components, for the PCA rows) the model uses.
    pub selected_count: usize,
    pub fit: ModelFit,
    pub predictor: LinearPredictor,
    pub guard_hit: bool,
}

/// Every non-constant ESG column of `data`, in column order.
pub fn candidate_columns(data: &PanelDataset) -> Result<(DMatrix<f64>, Vec<String>)> {
    let ids = data.esg_column_ids();
    let x = data.design_matrix(&ids)?;
    let zero = zero_variance_columns(&x);
    if zero.is_empty() {
        return Ok((x, ids));
    }
    let keep: Vec<usize> = (0..ids.len()).filter(|j| !zero.contains(j)).collect();
    let kept = keep.iter().map(|&j| ids[j].clone()).collect();
    Ok((x.select_columns(&keep), kept))
}

fn null_benchmark(label: &str, y: &[f64]) -> BenchmarkFit {
    let fit = null_fit(y);
    BenchmarkFit {
        label: label.into(),
        selected_count: 0,
        predictor: LinearPredictor::constant(fit.intercept),
        fit,
        guard_hit: false,
    }
}

fn pca_benchmark(
    label: &str,
    x: &DMatrix<f64>,
    ids: &[String],
    y: &nalgebra::DVector<f64>,
    rule: ComponentRule,
) -> Result<BenchmarkFit> {
    let pca = pca_components(x, ids, rule)?;
    let m = pca.n_components;
    if m == 0 {
        return Ok(null_benchmark(label, y.as_slice()));
    }
    let names: Vec<String> = (0..m).map(|i| format!("pc{}", i + 1)).collect();
    let fit = fit_ols(&pca.scores, y, &names, OlsOptions::default())?;
    // fold the score regression back through the standardized loadings
    let mut intercept = fit.intercept;
    let mut coefficients = BTreeMap::new();
    for (j, id) in ids.iter().enumerate() {
        let w: f64 = (0..m)
            .map(|c| pca.loadings[(j, c)] * fit.coefficient(&names[c]))
            .sum::<f64>()
            / pca.params.sds[j];
        intercept -= w * pca.params.means[j];
        coefficients.insert(id.clone(), w);
    }
    Ok(BenchmarkFit {
        label: label.into(),
        selected_count: m,
        fit,
        predictor: LinearPredictor {
            intercept,
            coefficients,
        },
        guard_hit: false,
    })
}

/// Fits one benchmark on preprocessed rows. `hvs_count` is the size of
/// the hierarchical selection the matched-PCA row mirrors.
pub fn fit_benchmark(
    kind: BenchmarkKind,
    data: &PanelDataset,
    hvs_count: usize,
    cfg: &HvsConfig,
) -> Result<BenchmarkFit> {
    let label = kind.label();
    let y = data.response_vector()?;
    let (x, ids) = candidate_columns(data)?;
    if ids.is_empty() {
        return Ok(null_benchmark(label, y.as_slice()));
    }
    let tagged = |e: HvsError| e.in_stage(label);
    match kind {
        BenchmarkKind::PcaVariance => {
            pca_benchmark(label, &x, &ids, &y, ComponentRule::VarianceTarget(PCA_VARIANCE_TARGET)).map_err(tagged)
        }
        BenchmarkKind::PcaMatched => {
            if hvs_count == 0 {
                return Ok(null_benchmark(label, y.as_slice()));
            }
            match pca_benchmark(label, &x, &ids, &y, ComponentRule::FixedCount(hvs_count)) {
                Err(HvsError::RankExceeded { rank, .. }) => {
                    warn!("{label}: {hvs_count} components requested, rank is {rank}; using {rank}");
                    pca_benchmark(label, &x, &ids, &y, ComponentRule::FixedCount(rank)).map_err(tagged)
                }
                other => other.map_err(tagged),
            }
        }
        BenchmarkKind::StepwiseAll => {
            let sel = stepwise_aic(&x, &ids, &y, &cfg.stepwise, Stage::Benchmark(label.into())).map_err(tagged)?;
            Ok(BenchmarkFit {
                label: label.into(),
                selected_count: sel.selected.len(),
                predictor: LinearPredictor {
                    intercept: sel.fit.intercept,
                    coefficients: sel.fit.coefficients.clone(),
                },
                fit: sel.fit,
                guard_hit: sel.guard_hit,
            })
        }
        BenchmarkKind::Lasso => {
            let l = fit_lasso_cv(&x, &ids, &y, None, &cfg.cv).map_err(tagged)?;
            Ok(BenchmarkFit {
                label: label.into(),
                selected_count: l.selected.len(),
                predictor: LinearPredictor {
                    intercept: l.raw_intercept,
                    coefficients: l.raw_coefficients.into_iter().filter(|(_, b)| *b != 0.0).collect(),
                },
                fit: l.fit,
                guard_hit: false,
            })
        }
    }
}

/// The hierarchical result expressed like a benchmark: Step 3 weights,
/// Step 2 variable count.
pub fn hvs_as_benchmark(res: &HvsResult) -> BenchmarkFit {
    let predictor = match &res.ridge {
        Some(r) => LinearPredictor {
            intercept: r.raw_intercept,
            coefficients: r.raw_coefficients.clone(),
        },
        None => LinearPredictor::constant(res.step3.fit.intercept),
    };
    BenchmarkFit {
        label: "hvs".into(),
        selected_count: res.step2.selected.len(),
        fit: res.step3.fit.clone(),
        predictor,
        guard_hit: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub label: String,
    pub selected: usize,
    pub pct_dev: f64,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub is_mse: f64,
    pub guard_hit: bool,
}

impl From<&BenchmarkFit> for BenchmarkRow {
    fn from(b: &BenchmarkFit) -> Self {
        BenchmarkRow {
            label: b.label.clone(),
            selected: b.selected_count,
            pct_dev: b.fit.pct_dev,
            aic: b.fit.aic,
            bic: b.fit.bic,
            is_mse: b.fit.mse(),
            guard_hit: b.guard_hit,
        }
    }
}

/// The four benchmark rows followed by the hierarchical row.
pub fn benchmark_suite(
    data: &PanelDataset,
    _tree: &HierarchyTree,
    hvs: &HvsResult,
    cfg: &HvsConfig,
) -> Result<Vec<BenchmarkFit>> {
    let mut out = Vec::with_capacity(5);
    for kind in BenchmarkKind::ALL {
        out.push(fit_benchmark(kind, data, hvs.step2.selected.len(), cfg)?);
    }
    out.push(hvs_as_benchmark(hvs));
    Ok(out)
}
