//! The three-stage hierarchical selection: stepwise AIC inside each
//! category, stepwise AIC across the survivors, then a cross-validated
//! ridge refit whose standardized weights feed the category importance
//! report.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};
use crate::model::{
    CategoryImportance, HierarchyTree, ImportanceReport, ModelFit, PanelDataset, SelectionResult, Stage,
};
use crate::regress::ols::predict as ols_predict;
use crate::regress::standardize::zero_variance_columns;
use crate::regress::{fit_ridge_cv, null_fit, stepwise_aic, CvPlan, RidgeDf, RidgeFit, StandardizationParams, StepwiseConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvsConfig {
    #[serde(default)]
    pub stepwise: StepwiseConfig,
    #[serde(default)]
    pub cv: CvPlan,
    /// Explicit ridge penalty grid; `None` uses the data-driven default.
    #[serde(default)]
    pub ridge_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub ridge_df: RidgeDf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HvsResult {
    pub step1: BTreeMap<String, SelectionResult>,
    pub step2: SelectionResult,
    pub step3: SelectionResult,
    pub ridge: Option<RidgeFit>,
    pub importance: ImportanceReport,
    /// Candidates left out of Step 1 because they are constant.
    pub excluded: Vec<String>,
}

impl HvsResult {
    pub fn lambda_star(&self) -> Option<f64> {
        self.ridge.as_ref().map(|r| r.lambda_star)
    }

    pub fn params(&self) -> Option<&StandardizationParams> {
        self.ridge.as_ref().map(|r| &r.params)
    }

    pub fn step1_union(&self, tree: &HierarchyTree) -> Vec<String> {
        union_in_tree_order(&self.step1, tree)
    }

    /// Step 3 predictions for the rows of `data`, which must hold complete
    /// values for the selected variables.
    pub fn predict(&self, data: &PanelDataset) -> Result<Vec<f64>> {
        match &self.ridge {
            Some(r) => {
                let x = data.design_matrix(&r.params.ids)?;
                Ok(r.predict(&x, &r.params.ids).iter().copied().collect())
            }
            None => Ok(vec![self.step3.fit.intercept; data.n_rows()]),
        }
    }

    /// Predictions of the unpenalized Step 2 least-squares model.
    pub fn predict_step2(&self, data: &PanelDataset) -> Result<Vec<f64>> {
        predict_selection(&self.step2, data)
    }
}

/// Predictions of a least-squares selection on raw-unit columns.
pub fn predict_selection(sel: &SelectionResult, data: &PanelDataset) -> Result<Vec<f64>> {
    if sel.selected.is_empty() {
        return Ok(vec![sel.fit.intercept; data.n_rows()]);
    }
    let x = data.design_matrix(&sel.selected)?;
    Ok(ols_predict(&sel.fit, &x, &sel.selected).iter().copied().collect())
}

fn empty_selection(stage: Stage, y: &[f64]) -> SelectionResult {
    SelectionResult {
        stage,
        selected: Vec::new(),
        fit: null_fit(y),
        trace: Vec::new(),
        guard_hit: false,
    }
}

/// ESG columns of `data` that belong to `category`, in tree order.
fn category_columns(data: &PanelDataset, tree: &HierarchyTree, category: &str) -> Vec<String> {
    tree.members(category)
        .into_iter()
        .filter(|id| data.column(id).is_some_and(|c| !c.exogenous))
        .map(str::to_owned)
        .collect()
}

fn drop_constant(x: DMatrix<f64>, ids: Vec<String>) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
    let zero = zero_variance_columns(&x);
    if zero.is_empty() {
        return (x, ids, Vec::new());
    }
    let keep: Vec<usize> = (0..ids.len()).filter(|j| !zero.contains(j)).collect();
    let dropped = zero.iter().map(|&j| ids[j].clone()).collect();
    let kept_ids = keep.iter().map(|&j| ids[j].clone()).collect();
    (x.select_columns(&keep), kept_ids, dropped)
}

fn run_category(
    data: &PanelDataset,
    tree: &HierarchyTree,
    category: &str,
    y: &DVector<f64>,
    cfg: &HvsConfig,
) -> Result<(SelectionResult, Vec<String>)> {
    let stage = Stage::Step1(category.to_string());
    let ids = category_columns(data, tree, category);
    if ids.is_empty() {
        return Ok((empty_selection(stage, y.as_slice()), Vec::new()));
    }
    let x = data.design_matrix(&ids)?;
    let (x, ids, dropped) = drop_constant(x, ids);
    for id in &dropped {
        warn!("category {category}: constant column `{id}` excluded");
    }
    if ids.is_empty() {
        return Ok((empty_selection(stage, y.as_slice()), dropped));
    }
    let sel = stepwise_aic(&x, &ids, y, &cfg.stepwise, stage)?;
    Ok((sel, dropped))
}

/// Stepwise AIC inside every category. Categories run concurrently;
/// results are keyed by category id.
pub fn hvs_step1(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &HvsConfig,
) -> Result<(BTreeMap<String, SelectionResult>, Vec<String>)> {
    let y = data.response_vector()?;
    let runs: Vec<Result<(String, SelectionResult, Vec<String>)>> = tree
        .categories
        .par_iter()
        .map(|c| {
            run_category(data, tree, &c.id, &y, cfg)
                .map(|(s, d)| (c.id.clone(), s, d))
                .map_err(|e| e.in_stage(format!("step1:{}", c.id)))
        })
        .collect();
    let mut out = BTreeMap::new();
    let mut excluded = Vec::new();
    for r in runs {
        let (id, sel, dropped) = r?;
        debug!("step1 {id}: {} selected", sel.selected.len());
        excluded.extend(dropped);
        out.insert(id, sel);
    }
    Ok((out, excluded))
}

fn union_in_tree_order(step1: &BTreeMap<String, SelectionResult>, tree: &HierarchyTree) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for c in &tree.categories {
        if let Some(sel) = step1.get(&c.id) {
            for id in &sel.selected {
                if seen.insert(id.clone()) {
                    out.push(id.clone());
                }
            }
        }
    }
    out
}

/// Stepwise AIC over the union of the Step 1 selections, taken in
/// category order and then selection order.
pub fn hvs_step2(
    step1: &BTreeMap<String, SelectionResult>,
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &HvsConfig,
) -> Result<SelectionResult> {
    let y = data.response_vector()?;
    let union = union_in_tree_order(step1, tree);
    if union.is_empty() {
        warn!("step 1 selected nothing; step 2 is empty");
        return Ok(empty_selection(Stage::Step2, y.as_slice()));
    }
    let x = data.design_matrix(&union)?;
    stepwise_aic(&x, &union, &y, &cfg.stepwise, Stage::Step2).map_err(|e| e.in_stage("step2"))
}

/// Ridge refit on exactly the Step 2 variables.
pub fn hvs_step3(
    step2: &SelectionResult,
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &HvsConfig,
) -> Result<(SelectionResult, Option<RidgeFit>, ImportanceReport)> {
    let y = data.response_vector()?;
    if step2.selected.is_empty() {
        return Ok((
            empty_selection(Stage::Step3, y.as_slice()),
            None,
            ImportanceReport::default(),
        ));
    }
    let ids = step2.selected.clone();
    let x = data.design_matrix(&ids)?;
    let ridge = fit_ridge_cv(&x, &ids, &y, cfg.ridge_grid.as_deref(), &cfg.cv, cfg.ridge_df)
        .map_err(|e| e.in_stage("step3"))?;
    let importance = match category_importance(&ridge.fit, tree) {
        Ok(r) => r,
        Err(HvsError::AllZeroCoefficients) => {
            warn!("step 3 coefficients are all zero; importance left empty");
            ImportanceReport::default()
        }
        Err(e) => return Err(e.in_stage("step3")),
    };
    let sel = SelectionResult {
        stage: Stage::Step3,
        selected: ids,
        fit: ridge.fit.clone(),
        trace: Vec::new(),
        guard_hit: false,
    };
    Ok((sel, Some(ridge), importance))
}

/// Absolute coefficient mass per category and its share of the total.
/// Categories without mass are left out.
pub fn category_importance(fit: &ModelFit, tree: &HierarchyTree) -> Result<ImportanceReport> {
    if !fit.standardized {
        return Err(HvsError::InvalidInput(
            "category importance needs coefficients on standardized predictors".into(),
        ));
    }
    let mut score: BTreeMap<String, f64> = BTreeMap::new();
    let mut members: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (id, b) in &fit.coefficients {
        let v = tree.variable(id).ok_or_else(|| HvsError::UnknownColumn(id.clone()))?;
        if *b != 0.0 {
            *score.entry(v.category_id.clone()).or_default() += b.abs();
            members.entry(v.category_id.clone()).or_default().push(id.clone());
        }
    }
    let total: f64 = score.values().sum();
    if total <= 0.0 {
        return Err(HvsError::AllZeroCoefficients);
    }
    let per_category = score
        .into_iter()
        .map(|(c, s)| {
            (
                c,
                CategoryImportance {
                    score: s,
                    pct: s / total * 100.0,
                },
            )
        })
        .collect();
    Ok(ImportanceReport {
        per_category,
        member_indices: members,
    })
}

/// Steps 1 to 3 on preprocessed data.
pub fn run_hvs(data: &PanelDataset, tree: &HierarchyTree, cfg: &HvsConfig) -> Result<HvsResult> {
    if data.has_missing() {
        return Err(HvsError::InvalidInput("run_hvs needs preprocessed data without missing cells".into()));
    }
    let (step1, excluded) = hvs_step1(data, tree, cfg)?;
    let step2 = hvs_step2(&step1, data, tree, cfg)?;
    let (step3, ridge, importance) = hvs_step3(&step2, data, tree, cfg)?;
    Ok(HvsResult {
        step1,
        step2,
        step3,
        ridge,
        importance,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFits {
    pub factors_only: ModelFit,
    pub esg_only: ModelFit,
    pub combined: ModelFit,
    pub lambdas: [Option<f64>; 3],
}

fn ridge_or_null(data: &PanelDataset, ids: &[String], cfg: &HvsConfig) -> Result<(ModelFit, Option<f64>)> {
    let y = data.response_vector()?;
    if ids.is_empty() {
        return Ok((null_fit(y.as_slice()), None));
    }
    let x = data.design_matrix(ids)?;
    let r = fit_ridge_cv(&x, ids, &y, cfg.ridge_grid.as_deref(), &cfg.cv, cfg.ridge_df)?;
    Ok((r.fit, Some(r.lambda_star)))
}

/// Factor-only, ESG-only and combined ridge fits sharing one CV plan.
pub fn augment_with_factors(
    selected: &[String],
    factors: &[String],
    data: &PanelDataset,
    cfg: &HvsConfig,
) -> Result<AugmentedFits> {
    for f in factors {
        let col = data
            .column(f)
            .ok_or_else(|| HvsError::InvalidInput(format!("factor column `{f}` not in panel")))?;
        if !col.exogenous {
            return Err(HvsError::InvalidInput(format!("factor column `{f}` is not flagged exogenous")));
        }
        if col.missing_count() > 0 {
            return Err(HvsError::InvalidInput(format!("factor column `{f}` has missing values")));
        }
    }
    let combined_ids: Vec<String> = factors.iter().chain(selected).cloned().collect();
    let (factors_only, l0) = ridge_or_null(data, factors, cfg).map_err(|e| e.in_stage("factors"))?;
    let (esg_only, l1) = ridge_or_null(data, selected, cfg).map_err(|e| e.in_stage("esg"))?;
    let (combined, l2) = ridge_or_null(data, &combined_ids, cfg).map_err(|e| e.in_stage("combined"))?;
    Ok(AugmentedFits {
        factors_only,
        esg_only,
        combined,
        lambdas: [l0, l1, l2],
    })
}
