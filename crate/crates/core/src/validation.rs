//! Out-of-sample designs (rolling temporal windows and leave-one-company
//! out), the mean-response baseline and matched-pairs tests.
//!
//! Every window or fold reruns preprocessing and the whole selection on
//! its training rows only. Test rows get the kind-based imputation and,
//! for any remaining numeric gaps, the training mean of that column.

use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::bench::{fit_benchmark, hvs_as_benchmark, BenchmarkKind, LinearPredictor};
use crate::error::{HvsError, Result};
use crate::hvs::{predict_selection, run_hvs, HvsConfig};
use crate::model::{Column, HierarchyTree, ObsKey, PanelDataset};
use crate::preprocess::{impute_by_kind, preprocess, PreprocessConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Temporal,
    CrossSectional,
}

pub const HVS_STEP3: &str = "hvs_step3";
pub const HVS_STEP2: &str = "hvs_step2";
pub const BASELINE: &str = "baseline";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsError {
    pub key: ObsKey,
    pub prediction: f64,
    pub actual: f64,
    pub squared_error: f64,
}

impl ObsError {
    pub fn new(key: ObsKey, prediction: f64, actual: f64) -> Self {
        let e = prediction - actual;
        Self {
            key,
            prediction,
            actual,
            squared_error: e * e,
        }
    }
}

fn mean_error(rows: &[ObsError]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.squared_error).sum::<f64>() / rows.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub design: Design,
    pub model_label: String,
    /// Held-out predictions, one per test row, in key order.
    pub oos: Vec<ObsError>,
    /// In-sample predictions from the model fitted on every row.
    pub in_sample: Vec<ObsError>,
    pub is_mse: f64,
    pub oos_mse: f64,
}

impl EvalRecord {
    pub fn new(design: Design, label: impl Into<String>, mut oos: Vec<ObsError>, mut in_sample: Vec<ObsError>) -> Self {
        oos.sort_by(|a, b| a.key.cmp(&b.key));
        in_sample.sort_by(|a, b| a.key.cmp(&b.key));
        Self {
            design,
            model_label: label.into(),
            is_mse: mean_error(&in_sample),
            oos_mse: mean_error(&oos),
            oos,
            in_sample,
        }
    }

    /// Mean held-out squared error per company.
    pub fn per_company(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &self.oos {
            let e = acc.entry(r.key.company.clone()).or_default();
            e.0 += r.squared_error;
            e.1 += 1;
        }
        acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub window_years: usize,
    pub preprocess: PreprocessConfig,
    pub hvs: HvsConfig,
    /// Benchmarks evaluated alongside the hierarchical model.
    pub benchmarks: Vec<BenchmarkKind>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            window_years: 5,
            preprocess: PreprocessConfig::default(),
            hvs: HvsConfig::default(),
            benchmarks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub label: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub selected: Vec<String>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub design: Design,
    pub models: BTreeMap<String, EvalRecord>,
    pub folds: Vec<FoldSummary>,
}

impl ValidationReport {
    pub fn model(&self, label: &str) -> Result<&EvalRecord> {
        self.models
            .get(label)
            .ok_or_else(|| HvsError::InvalidInput(format!("no model `{label}` in report")))
    }
}

/// Test rows made usable by a model trained on `train`: kind-based
/// imputation, training-mean fill for numeric gaps, training columns only.
pub fn prepare_test_rows(
    test: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &PreprocessConfig,
    train: &PanelDataset,
) -> Result<PanelDataset> {
    let imputed = impute_by_kind(test, tree, cfg)?;
    let mut columns = Vec::with_capacity(train.columns().len());
    for tc in train.columns() {
        let col = imputed
            .column(&tc.id)
            .ok_or_else(|| HvsError::UnknownColumn(tc.id.clone()))?;
        let present: Vec<f64> = tc.values.iter().flatten().copied().collect();
        let fill = present.iter().sum::<f64>() / present.len().max(1) as f64;
        columns.push(Column {
            id: tc.id.clone(),
            exogenous: tc.exogenous,
            values: col.values.iter().map(|v| Some(v.unwrap_or(fill))).collect(),
        });
    }
    imputed.with_columns(columns)
}

struct Fold {
    label: String,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn temporal_folds(data: &PanelDataset, window: usize) -> Result<Vec<Fold>> {
    let years = data.years();
    if window == 0 || years.len() < window + 1 {
        return Err(HvsError::InvalidInput(format!(
            "temporal design needs at least {} distinct years, found {}",
            window + 1,
            years.len()
        )));
    }
    let first = years[0];
    let w = window as i32;
    Ok(years
        .iter()
        .filter(|&&t| t - w >= first)
        .map(|&t| Fold {
            label: t.to_string(),
            train: data.rows_where(|k| k.year >= t - w && k.year < t),
            test: data.rows_where(|k| k.year == t),
        })
        .collect())
}

fn loco_folds(data: &PanelDataset) -> Result<Vec<Fold>> {
    let companies = data.companies();
    if companies.len() < 3 {
        return Err(HvsError::InvalidInput(format!(
            "leave-one-company-out needs at least 3 companies, found {}",
            companies.len()
        )));
    }
    Ok(companies
        .into_iter()
        .map(|c| Fold {
            train: data.rows_where(|k| k.company != c),
            test: data.rows_where(|k| k.company == c),
            label: c,
        })
        .collect())
}

fn baseline_predictions(design: Design, train: &PanelDataset, test: &PanelDataset) -> Result<Vec<f64>> {
    let y = train.require_response()?;
    let global = y.iter().sum::<f64>() / y.len() as f64;
    if design == Design::CrossSectional {
        return Ok(vec![global; test.n_rows()]);
    }
    let mut by_company: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (k, v) in train.keys().iter().zip(y) {
        let e = by_company.entry(k.company.as_str()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    Ok(test
        .keys()
        .iter()
        .map(|k| match by_company.get(k.company.as_str()) {
            Some((s, n)) => s / *n as f64,
            None => {
                info!("baseline: {k} has no training history, using the window mean");
                global
            }
        })
        .collect())
}

type FoldOutcome = (FoldSummary, BTreeMap<String, Vec<ObsError>>);

fn run_fold(
    design: Design,
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &ValidationConfig,
    fold: &Fold,
) -> Result<FoldOutcome> {
    let train_raw = data.select_rows(&fold.train);
    let test_raw = data.select_rows(&fold.test);
    let actual = test_raw.require_response()?.to_vec();
    let mut summary = FoldSummary {
        label: fold.label.clone(),
        train_rows: 0,
        test_rows: fold.test.len(),
        selected: Vec::new(),
        skipped: None,
    };
    let (train, _) = match preprocess(&train_raw, tree, &cfg.preprocess) {
        Ok(t) => t,
        Err(HvsError::NoRowsRemain) => {
            summary.skipped = Some("no complete training rows".into());
            warn!("fold {}: skipped, no complete training rows", fold.label);
            return Ok((summary, BTreeMap::new()));
        }
        Err(e) => return Err(e),
    };
    summary.train_rows = train.n_rows();
    let res = run_hvs(&train, tree, &cfg.hvs)?;
    summary.selected = res.step2.selected.clone();
    if train.n_rows() < 3 * res.step2.selected.len() {
        let why = format!(
            "{} training rows for {} selected variables",
            train.n_rows(),
            res.step2.selected.len()
        );
        warn!("fold {}: skipped, {why}", fold.label);
        summary.skipped = Some(why);
        return Ok((summary, BTreeMap::new()));
    }
    let test = prepare_test_rows(&test_raw, tree, &cfg.preprocess, &train)?;
    let mut preds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    preds.insert(HVS_STEP3.into(), res.predict(&test)?);
    preds.insert(HVS_STEP2.into(), res.predict_step2(&test)?);
    preds.insert(BASELINE.into(), baseline_predictions(design, &train, &test)?);
    for &kind in &cfg.benchmarks {
        let b = fit_benchmark(kind, &train, res.step2.selected.len(), &cfg.hvs)?;
        preds.insert(kind.label().into(), b.predictor.predict(&test)?);
    }
    let errors = preds
        .into_iter()
        .map(|(label, p)| {
            let rows = test
                .keys()
                .iter()
                .zip(p)
                .zip(&actual)
                .map(|((k, p), a)| ObsError::new(k.clone(), p, *a))
                .collect();
            (label, rows)
        })
        .collect();
    Ok((summary, errors))
}

/// In-sample errors of every model fitted once on all preprocessed rows.
fn in_sample_errors(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &ValidationConfig,
) -> Result<BTreeMap<String, Vec<ObsError>>> {
    let (full, _) = preprocess(data, tree, &cfg.preprocess)?;
    let res = run_hvs(&full, tree, &cfg.hvs)?;
    let y = full.require_response()?;
    let mut preds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    preds.insert(HVS_STEP3.into(), hvs_as_benchmark(&res).predictor.predict(&full)?);
    preds.insert(HVS_STEP2.into(), predict_selection(&res.step2, &full)?);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    preds.insert(BASELINE.into(), LinearPredictor::constant(mean).predict(&full)?);
    for &kind in &cfg.benchmarks {
        let b = fit_benchmark(kind, &full, res.step2.selected.len(), &cfg.hvs)?;
        preds.insert(kind.label().into(), b.predictor.predict(&full)?);
    }
    Ok(preds
        .into_iter()
        .map(|(label, p)| {
            let rows = full
                .keys()
                .iter()
                .zip(p)
                .zip(y)
                .map(|((k, p), a)| ObsError::new(k.clone(), p, *a))
                .collect();
            (label, rows)
        })
        .collect())
}

fn evaluate(
    design: Design,
    folds: Vec<Fold>,
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    data.require_response()?;
    let outcomes: Vec<Result<FoldOutcome>> = folds
        .par_iter()
        .map(|f| run_fold(design, data, tree, cfg, f).map_err(|e| e.in_stage(format!("fold {}", f.label))))
        .collect();
    let mut oos: BTreeMap<String, Vec<ObsError>> = BTreeMap::new();
    let mut summaries = Vec::with_capacity(folds.len());
    for o in outcomes {
        let (summary, errors) = o?;
        for (label, rows) in errors {
            oos.entry(label).or_default().extend(rows);
        }
        summaries.push(summary);
    }
    let mut is = in_sample_errors(data, tree, cfg).map_err(|e| e.in_stage("in-sample"))?;
    let mut labels: Vec<String> = vec![HVS_STEP3.into(), HVS_STEP2.into(), BASELINE.into()];
    labels.extend(cfg.benchmarks.iter().map(|k| k.label().to_string()));
    let models = labels
        .into_iter()
        .map(|label| {
            let rec = EvalRecord::new(
                design,
                label.clone(),
                oos.remove(&label).unwrap_or_default(),
                is.remove(&label).unwrap_or_default(),
            );
            (label, rec)
        })
        .collect();
    Ok(ValidationReport {
        design,
        models,
        folds: summaries,
    })
}

/// Rolling windows: train on `[T − w, T − 1]`, predict year `T`.
pub fn temporal_rolling_eval(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let folds = temporal_folds(data, cfg.window_years)?;
    evaluate(Design::Temporal, folds, data, tree, cfg)
}

/// Leave one company out at a time.
pub fn cross_sectional_loco_eval(
    data: &PanelDataset,
    tree: &HierarchyTree,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let folds = loco_folds(data)?;
    evaluate(Design::CrossSectional, folds, data, tree, cfg)
}

/// The mean-response forecaster on its own. Temporal: the company's
/// window mean (window-wide mean when the company has no history).
/// Cross-sectional: the training-set mean.
pub fn mean_response_baseline(design: Design, data: &PanelDataset, window_years: usize) -> Result<EvalRecord> {
    let y = data.require_response()?;
    let folds = match design {
        Design::Temporal => temporal_folds(data, window_years)?,
        Design::CrossSectional => loco_folds(data)?,
    };
    let mut oos = Vec::new();
    for f in &folds {
        let train = data.select_rows(&f.train);
        let test = data.select_rows(&f.test);
        let p = baseline_predictions(design, &train, &test)?;
        let actual = test.require_response()?;
        oos.extend(
            test.keys()
                .iter()
                .zip(p)
                .zip(actual)
                .map(|((k, p), a)| ObsError::new(k.clone(), p, *a)),
        );
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let is = data
        .keys()
        .iter()
        .zip(y)
        .map(|(k, a)| ObsError::new(k.clone(), mean, *a))
        .collect();
    Ok(EvalRecord::new(design, BASELINE, oos, is))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedMethod {
    #[default]
    TTest,
    SignedRank,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub method: PairedMethod,
    pub n: usize,
    pub mean_difference: f64,
    pub statistic: f64,
    /// One-sided p-value for "`a` has smaller squared errors than `b`".
    pub p_value: f64,
}

fn aligned_differences(a: &[ObsError], b: &[ObsError]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(HvsError::KeyMismatch);
    }
    let mut a: Vec<&ObsError> = a.iter().collect();
    let mut b: Vec<&ObsError> = b.iter().collect();
    a.sort_by(|x, y| x.key.cmp(&y.key));
    b.sort_by(|x, y| x.key.cmp(&y.key));
    a.iter()
        .zip(&b)
        .map(|(x, y)| {
            if x.key == y.key {
                Ok(x.squared_error - y.squared_error)
            } else {
                Err(HvsError::KeyMismatch)
            }
        })
        .collect()
}

fn t_test(d: &[f64]) -> Result<(f64, f64)> {
    let n = d.len();
    if n < 2 {
        return Err(HvsError::InsufficientObservations { rows: n, cols: 1 });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    if d.iter().all(|&v| v == 0.0) {
        return Ok((0.0, 1.0));
    }
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        // every difference is the same nonzero value
        return Ok(if mean < 0.0 {
            (f64::NEG_INFINITY, f64::MIN_POSITIVE)
        } else {
            (f64::INFINITY, 1.0)
        });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| HvsError::InvalidInput(e.to_string()))?;
    Ok((t, dist.cdf(t).clamp(f64::MIN_POSITIVE, 1.0)))
}

fn signed_rank(d: &[f64]) -> Result<(f64, f64)> {
    let mut nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    if nz.is_empty() {
        return Ok((0.0, 1.0));
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let n = nz.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nz[j + 1].abs() == nz[i].abs() {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|x| *x = r);
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0).sqrt();
    if sigma == 0.0 {
        return Ok((0.0, 1.0));
    }
    let z = (w_plus - mu + 0.5) / sigma;
    let normal = Normal::standard();
    Ok((z, normal.cdf(z).clamp(f64::MIN_POSITIVE, 1.0)))
}

/// Paired one-sided test on squared-error differences `a − b`; small
/// p-values favour `a`. Both records must cover the same keys.
pub fn matched_pairs_test(a: &[ObsError], b: &[ObsError], method: PairedMethod) -> Result<PairedTest> {
    let d = aligned_differences(a, b)?;
    let (statistic, p_value) = match method {
        PairedMethod::TTest => t_test(&d)?,
        PairedMethod::SignedRank => signed_rank(&d)?,
    };
    Ok(PairedTest {
        method,
        n: d.len(),
        mean_difference: d.iter().sum::<f64>() / d.len().max(1) as f64,
        statistic,
        p_value,
    })
}

/// Every ordered pair of models, out-of-sample and in-sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub a: String,
    pub b: String,
    pub oos: PairedTest,
    pub in_sample: PairedTest,
}

pub fn pairwise_tests(report: &ValidationReport, method: PairedMethod) -> Result<Vec<PairwiseRow>> {
    let mut out = Vec::new();
    for (la, ra) in &report.models {
        for (lb, rb) in &report.models {
            if la == lb {
                continue;
            }
            out.push(PairwiseRow {
                a: la.clone(),
                b: lb.clone(),
                oos: matched_pairs_test(&ra.oos, &rb.oos, method)?,
                in_sample: matched_pairs_test(&ra.in_sample, &rb.in_sample, method)?,
            });
        }
    }
    Ok(out)
}
