//! Response construction and panel cleaning.
//!
//! The cleaning pipeline runs in a fixed order: kind-based imputation,
//! then the numeric availability filter, then removal of rows that still
//! have missing cells. Running the filter before imputation would drop
//! sparsely reported boolean columns that imputation is meant to keep.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};
use crate::model::{Column, HierarchyTree, ObsKey, PanelDataset, VariableKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub company: String,
    pub date: NaiveDate,
    pub daily_return: f64,
}

/// Daily simple returns, unique per (company, date).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReturnsSeries {
    rows: Vec<ReturnRow>,
}

impl ReturnsSeries {
    pub fn new(rows: Vec<ReturnRow>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &rows {
            if !seen.insert((r.company.as_str(), r.date)) {
                return Err(HvsError::InvalidInput(format!(
                    "duplicate return for {} on {}",
                    r.company, r.date
                )));
            }
            if !r.daily_return.is_finite() {
                return Err(HvsError::InvalidInput(format!(
                    "non-finite return for {} on {}",
                    r.company, r.date
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ReturnRow] {
        &self.rows
    }

    /// Returns of one company-year, sorted by value so that downstream
    /// sums do not depend on row order.
    pub fn year_values(&self, company: &str, year: i32) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.company == company && r.date.year() == year)
            .map(|r| r.daily_return)
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// All company-years present, grouped.
    pub fn grouped(&self) -> BTreeMap<ObsKey, Vec<f64>> {
        let mut out: BTreeMap<ObsKey, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(ObsKey::new(r.company.clone(), r.date.year()))
                .or_default()
                .push(r.daily_return);
        }
        for v in out.values_mut() {
            v.sort_by(f64::total_cmp);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub availability_threshold: f64,
    pub min_daily_obs: usize,
    pub boolean_impute: f64,
    pub controversy_impute: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            availability_threshold: 0.8,
            min_daily_obs: 60,
            boolean_impute: 0.0,
            controversy_impute: 0.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.availability_threshold > 0.0 && self.availability_threshold <= 1.0) {
            return Err(HvsError::InvalidInput(format!(
                "availability threshold {} outside (0, 1]",
                self.availability_threshold
            )));
        }
        Ok(())
    }
}

fn log_sd(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 || values.iter().all(|v| *v == values[0]) {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|r| (r - mean) * (r - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    (sd > 0.0).then(|| sd.ln())
}

/// Natural log of the sample standard deviation (divisor `N − 1`) of one
/// company-year's daily returns. `None` when fewer than
/// `cfg.min_daily_obs` (or 2) returns exist or all returns are equal.
pub fn compute_log_volatility(
    returns: &ReturnsSeries,
    company: &str,
    year: i32,
    cfg: &PreprocessConfig,
) -> Option<f64> {
    let v = returns.year_values(company, year);
    if v.len() < cfg.min_daily_obs {
        return None;
    }
    log_sd(&v)
}

/// Compounded simple return over one company-year.
pub fn compute_annual_return(
    returns: &ReturnsSeries,
    company: &str,
    year: i32,
    cfg: &PreprocessConfig,
) -> Option<f64> {
    let v = returns.year_values(company, year);
    if v.is_empty() || v.len() < cfg.min_daily_obs {
        return None;
    }
    Some(v.iter().map(|r| 1.0 + r).product::<f64>() - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnsMeasure {
    LogVolatility,
    AnnualReturn,
}

/// Response per panel row from a returns series. Rows without a defined
/// value are reported by key.
pub fn response_from_returns(
    keys: &[ObsKey],
    returns: &ReturnsSeries,
    measure: ReturnsMeasure,
    cfg: &PreprocessConfig,
) -> (Vec<Option<f64>>, Vec<ObsKey>) {
    let grouped = returns.grouped();
    let mut out = Vec::with_capacity(keys.len());
    let mut undefined = Vec::new();
    for k in keys {
        let v = grouped.get(k).and_then(|v| {
            if v.len() < cfg.min_daily_obs {
                return None;
            }
            match measure {
                ReturnsMeasure::LogVolatility => log_sd(v),
                ReturnsMeasure::AnnualReturn => Some(v.iter().map(|r| 1.0 + r).product::<f64>() - 1.0),
            }
        });
        if v.is_none() {
            undefined.push(k.clone());
        }
        out.push(v);
    }
    (out, undefined)
}

pub fn box_cox(y: f64, lambda: f64) -> f64 {
    let l = y.ln();
    if lambda == 0.0 {
        l
    } else {
        (lambda * l).exp_m1() / lambda
    }
}

/// `−2.0, −1.9, …, 2.0`.
pub fn default_box_cox_grid() -> Vec<f64> {
    (-20..=20).map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxScan {
    pub lambda_hat: f64,
    /// `(λ, profile log-likelihood)` for each grid value.
    pub profile: Vec<(f64, f64)>,
}

/// Profile log-likelihood of the Box-Cox model on a grid:
/// `ℓ(λ) = −n/2·ln σ̂²(λ) + (λ − 1)·Σ ln y`, with `σ̂²` the variance
/// (divisor `n`) of the transformed sample.
pub fn box_cox_scan(y: &[f64], grid: &[f64]) -> Result<BoxCoxScan> {
    if grid.is_empty() {
        return Err(HvsError::InvalidInput("empty Box-Cox grid".into()));
    }
    if y.len() < 2 {
        return Err(HvsError::InvalidInput("Box-Cox needs at least two values".into()));
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(HvsError::NonPositive { index, value });
    }
    let n = y.len() as f64;
    let sum_log: f64 = y.iter().map(|v| v.ln()).sum();
    let mut profile = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let t: Vec<f64> = y.iter().map(|&v| box_cox(v, lambda)).collect();
        let m = t.iter().sum::<f64>() / n;
        let var = t.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        if !(var > 0.0) || !var.is_finite() {
            return Err(HvsError::ZeroVariance("Box-Cox transformed response".into()));
        }
        profile.push((lambda, -n / 2.0 * var.ln() + (lambda - 1.0) * sum_log));
    }
    let mut best = 0;
    for (i, &(l, ll)) in profile.iter().enumerate() {
        let (bl, bll) = profile[best];
        if ll > bll || (ll == bll && l.abs() < bl.abs()) {
            best = i;
        }
    }
    Ok(BoxCoxScan {
        lambda_hat: profile[best].0,
        profile,
    })
}

fn column_kind(tree: &HierarchyTree, col: &Column) -> Result<Option<VariableKind>> {
    if col.exogenous {
        return Ok(None);
    }
    match tree.variable(&col.id) {
        Some(v) => Ok(Some(v.kind)),
        None if tree.is_exogenous(&col.id) => Ok(None),
        None => Err(HvsError::UnknownColumn(col.id.clone())),
    }
}

/// Fills missing Boolean and Controversy cells with the configured
/// constants. Numeric and exogenous columns are left as they are.
pub fn impute_by_kind(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &PreprocessConfig,
) -> Result<PanelDataset> {
    let mut columns = Vec::with_capacity(data.columns().len());
    for col in data.columns() {
        let fill = match column_kind(tree, col)? {
            Some(VariableKind::Boolean) => Some(cfg.boolean_impute),
            Some(VariableKind::Controversy) => Some(cfg.controversy_impute),
            _ => None,
        };
        let mut c = col.clone();
        if let Some(f) = fill {
            for v in &mut c.values {
                v.get_or_insert(f);
            }
        }
        columns.push(c);
    }
    data.clone().with_columns(columns)
}

pub fn availability(col: &Column) -> f64 {
    if col.values.is_empty() {
        return 0.0;
    }
    (col.values.len() - col.missing_count()) as f64 / col.values.len() as f64
}

/// Drops Numeric columns whose non-missing fraction is below the
/// threshold. The comparison is inclusive: exactly the threshold stays.
pub fn filter_availability(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &PreprocessConfig,
) -> Result<(PanelDataset, Vec<String>)> {
    cfg.validate()?;
    let n = data.n_rows();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for col in data.columns() {
        let numeric = matches!(column_kind(tree, col)?, Some(VariableKind::Numeric));
        // slack absorbs rounding in threshold·n, e.g. 0.8 × 695
        let present = n - col.missing_count();
        let needed = cfg.availability_threshold * n as f64;
        let ok = !numeric || present as f64 >= needed - 1e-9 * n as f64;
        if ok {
            keep.push(col.clone());
        } else {
            dropped.push(col.id.clone());
        }
    }
    Ok((data.clone().with_columns(keep)?, dropped))
}

/// Removes every row that still has a missing cell.
pub fn drop_incomplete_rows(data: &PanelDataset) -> Result<(PanelDataset, Vec<ObsKey>)> {
    let n = data.n_rows();
    let complete: Vec<usize> = (0..n)
        .filter(|&i| data.columns().iter().all(|c| c.values[i].is_some()))
        .collect();
    if complete.is_empty() {
        return Err(HvsError::NoRowsRemain);
    }
    let dropped = (0..n)
        .filter(|i| complete.binary_search(i).is_err())
        .map(|i| data.keys()[i].clone())
        .collect();
    Ok((data.select_rows(&complete), dropped))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessLog {
    pub rows_in: usize,
    pub columns_in: usize,
    /// Imputed cell count per column.
    pub imputed: BTreeMap<String, usize>,
    /// Dropped columns with their availability.
    pub dropped_columns: Vec<(String, f64)>,
    pub dropped_rows: Vec<ObsKey>,
    pub rows_out: usize,
    pub columns_out: usize,
}

/// Imputation, availability filter and row removal, in that order.
pub fn preprocess(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &PreprocessConfig,
) -> Result<(PanelDataset, PreprocessLog)> {
    cfg.validate()?;
    let imputed = impute_by_kind(data, tree, cfg)?;
    let imputed_counts: BTreeMap<String, usize> = data
        .columns()
        .iter()
        .zip(imputed.columns())
        .map(|(a, b)| (a.id.clone(), a.missing_count() - b.missing_count()))
        .filter(|(_, c)| *c > 0)
        .collect();
    let (filtered, dropped_cols) = filter_availability(&imputed, tree, cfg)?;
    let dropped_columns = dropped_cols
        .into_iter()
        .map(|id| {
            let a = imputed.column(&id).map(availability).unwrap_or(0.0);
            (id, a)
        })
        .collect();
    let (out, dropped_rows) = drop_incomplete_rows(&filtered)?;
    let log = PreprocessLog {
        rows_in: data.n_rows(),
        columns_in: data.columns().len(),
        imputed: imputed_counts,
        dropped_columns,
        dropped_rows,
        rows_out: out.n_rows(),
        columns_out: out.columns().len(),
    };
    Ok((out, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CategoryNode, Pillar, PillarNode, VariableDescriptor};

    fn tree() -> HierarchyTree {
        let v = |id: &str, kind| VariableDescriptor {
            id: id.into(),
            display_name: id.into(),
            kind,
            category_id: "c".into(),
            pillar_id: Pillar::E,
        };
        HierarchyTree {
            pillars: Pillar::ALL
                .iter()
                .map(|&p| PillarNode {
                    id: p,
                    name: p.default_name().into(),
                })
                .collect(),
            categories: vec![CategoryNode {
                id: "c".into(),
                name: "C".into(),
                pillar_id: Pillar::E,
            }],
            variables: vec![
                v("b", VariableKind::Boolean),
                v("k", VariableKind::Controversy),
                v("x", VariableKind::Numeric),
            ],
            exogenous: vec!["mkt".into()],
            ignored: vec![],
        }
    }

    fn keys(n: usize) -> Vec<ObsKey> {
        (0..n).map(|i| ObsKey::new(format!("co{i}"), 2020)).collect()
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn two_point_log_volatility() {
        let rows = vec![
            ReturnRow { company: "a".into(), date: date(2021, 1, 4), daily_return: 0.01 },
            ReturnRow { company: "a".into(), date: date(2021, 1, 5), daily_return: 0.03 },
        ];
        let s = ReturnsSeries::new(rows).unwrap();
        let cfg = PreprocessConfig { min_daily_obs: 2, ..Default::default() };
        let lv = compute_log_volatility(&s, "a", 2021, &cfg).unwrap();
        // two points: sd = |a − b| / √2
        let oracle = ((0.03f64 - 0.01).abs() / 2f64.sqrt()).ln();
        assert!((lv - oracle).abs() < 1e-12);
        assert!((lv - (-4.258_596_595_708_4)).abs() < 1e-9);
    }

    #[test]
    fn constant_returns_are_undefined() {
        let rows = (1..=80)
            .map(|d| ReturnRow {
                company: "a".into(),
                date: date(2021, 1, 1) + chrono::Duration::days(d),
                daily_return: 0.002,
            })
            .collect();
        let s = ReturnsSeries::new(rows).unwrap();
        assert!(compute_log_volatility(&s, "a", 2021, &PreprocessConfig::default()).is_none());
    }

    #[test]
    fn too_few_returns_are_undefined() {
        let rows = (1..=10)
            .map(|d| ReturnRow {
                company: "a".into(),
                date: date(2021, 2, d),
                daily_return: d as f64 * 0.001,
            })
            .collect();
        let s = ReturnsSeries::new(rows).unwrap();
        assert!(compute_log_volatility(&s, "a", 2021, &PreprocessConfig::default()).is_none());
    }

    #[test]
    fn duplicate_return_dates_rejected() {
        let r = ReturnRow { company: "a".into(), date: date(2021, 1, 4), daily_return: 0.0 };
        assert!(ReturnsSeries::new(vec![r.clone(), r]).is_err());
    }

    #[test]
    fn box_cox_rejects_non_positive() {
        assert!(matches!(
            box_cox_scan(&[1.0, 0.0, 2.0], &default_box_cox_grid()),
            Err(HvsError::NonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn box_cox_zero_spread_is_an_error() {
        assert!(box_cox_scan(&[3.0; 20], &default_box_cox_grid()).is_err());
    }

    #[test]
    fn box_cox_grid_contains_exact_zero() {
        let g = default_box_cox_grid();
        assert_eq!(g.len(), 41);
        assert!(g.contains(&0.0));
        assert_eq!(box_cox(std::f64::consts::E, 0.0), 1.0);
        assert!((box_cox(4.0, 0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn imputation_by_kind() {
        let d = PanelDataset::new(
            keys(3),
            vec![
                Column::new("b", vec![Some(1.0), None, Some(0.0)]),
                Column::new("k", vec![None, Some(2.0), Some(1.0)]),
                Column::new("x", vec![None, Some(5.0), Some(1.0)]),
            ],
            None,
        )
        .unwrap();
        let out = impute_by_kind(&d, &tree(), &PreprocessConfig::default()).unwrap();
        assert_eq!(out.column("b").unwrap().values, vec![Some(1.0), Some(0.0), Some(0.0)]);
        assert_eq!(out.column("k").unwrap().values, vec![Some(0.0), Some(2.0), Some(1.0)]);
        assert_eq!(out.column("x").unwrap().values, vec![None, Some(5.0), Some(1.0)]);
    }

    #[test]
    fn unknown_column_rejected() {
        let d = PanelDataset::new(keys(1), vec![Column::new("zzz", vec![Some(1.0)])], None).unwrap();
        assert!(matches!(
            impute_by_kind(&d, &tree(), &PreprocessConfig::default()),
            Err(HvsError::UnknownColumn(_))
        ));
        let d = PanelDataset::new(keys(1), vec![Column::new("mkt", vec![Some(1.0)])], None).unwrap();
        assert!(impute_by_kind(&d, &tree(), &PreprocessConfig::default()).is_ok());
    }

    fn numeric_with_present(present: usize, n: usize) -> PanelDataset {
        let vals = (0..n).map(|i| (i < present).then_some(i as f64)).collect();
        PanelDataset::new(keys(n), vec![Column::new("x", vals)], None).unwrap()
    }

    #[test]
    fn availability_boundary() {
        let cfg = PreprocessConfig::default();
        let (_, dropped) = filter_availability(&numeric_with_present(79, 100), &tree(), &cfg).unwrap();
        assert_eq!(dropped, vec!["x".to_string()]);
        let (_, dropped) = filter_availability(&numeric_with_present(80, 100), &tree(), &cfg).unwrap();
        assert!(dropped.is_empty());
    }

    #[test]
    fn sparse_boolean_survives_fixed_order() {
        let n = 10;
        let b = (0..n).map(|i| (i == 0).then_some(1.0)).collect();
        let x = (0..n).map(|i| Some(i as f64)).collect();
        let d = PanelDataset::new(keys(n), vec![Column::new("b", b), Column::new("x", x)], None).unwrap();
        let cfg = PreprocessConfig::default();
        let (out, log) = preprocess(&d, &tree(), &cfg).unwrap();
        assert!(out.column("b").is_some());
        assert_eq!(out.n_rows(), n);
        assert!(log.dropped_columns.is_empty());
        // the reverse order would see 10% availability on `b`
        let (filtered, _) = filter_availability(&d, &tree(), &cfg).unwrap();
        assert!(filtered.column("b").is_some());
        assert!(availability(d.column("b").unwrap()) < 0.8);
    }

    #[test]
    fn row_drop() {
        let d = PanelDataset::new(
            keys(3),
            vec![Column::new("x", vec![Some(1.0), None, Some(3.0)])],
            None,
        )
        .unwrap();
        let (out, dropped) = drop_incomplete_rows(&d).unwrap();
        assert_eq!(out.n_rows(), 2);
        assert_eq!(dropped, vec![ObsKey::new("co1", 2020)]);
        assert!(!out.has_missing());
        let (same, none) = drop_incomplete_rows(&out).unwrap();
        assert_eq!(same, out);
        assert!(none.is_empty());
    }

    #[test]
    fn all_rows_incomplete_is_an_error() {
        let d = PanelDataset::new(keys(2), vec![Column::new("x", vec![None, None])], None).unwrap();
        assert!(matches!(drop_incomplete_rows(&d), Err(HvsError::NoRowsRemain)));
    }
}
