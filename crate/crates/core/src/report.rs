//! Run configuration and the end-to-end run that writes every report
//! artifact: preprocessing log, selection result, importance table and pie
//! data, benchmark table, validation tables, Box-Cox diagnostic, factor
//! augmentation table and the plot-data files.
//!
//! Each artifact carries a schema version, the configuration hash and the
//! seed. CSV artifacts put them on a leading `#` line; JSON artifacts wrap
//! their body in an envelope.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{benchmark_suite, BenchmarkKind, BenchmarkRow};
use crate::error::{HvsError, Result};
use crate::hvs::{augment_with_factors, run_hvs, AugmentedFits, HvsConfig, HvsResult};
use crate::ingest::{attach_response, fmt_f64, read_factors, read_hierarchy, read_panel, read_returns, take_response_column};
use crate::model::{validate_tree, HierarchyTree, ModelFit, ObsKey, PanelDataset, Pillar};
use crate::preprocess::{
    box_cox, box_cox_scan, default_box_cox_grid, preprocess, response_from_returns, PreprocessConfig, PreprocessLog,
    ReturnsMeasure,
};
use crate::regress::jarque_bera;
use crate::validation::{
    cross_sectional_loco_eval, pairwise_tests, temporal_rolling_eval, PairedMethod, ValidationConfig,
    ValidationReport,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "column")]
pub enum ResponseMode {
    /// Use an existing panel column as the response.
    PrecomputedColumn(String),
    /// Log of the yearly standard deviation of daily returns.
    LogVolatilityFromReturns,
    /// Compounded yearly return.
    ReturnsResponse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Toggles {
    #[serde(default = "yes")]
    pub benchmarks: bool,
    #[serde(default)]
    pub temporal: bool,
    #[serde(default)]
    pub cross_sectional: bool,
    /// Evaluate the benchmark selectors inside the validation designs too.
    #[serde(default)]
    pub validate_benchmarks: bool,
    #[serde(default = "yes")]
    pub box_cox: bool,
}

fn yes() -> bool {
    true
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            benchmarks: true,
            temporal: false,
            cross_sectional: false,
            validate_benchmarks: false,
            box_cox: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub panel: PathBuf,
    pub hierarchy: PathBuf,
    #[serde(default)]
    pub returns: Option<PathBuf>,
    #[serde(default)]
    pub factors: Option<PathBuf>,
    pub response: ResponseMode,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub hvs: HvsConfig,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default = "default_window")]
    pub window_years: usize,
    #[serde(default)]
    pub paired_method: PairedMethod,
    #[serde(default)]
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn default_window() -> usize {
    5
}

impl RunConfig {
    pub fn new(panel: PathBuf, hierarchy: PathBuf, response: ResponseMode, output_dir: PathBuf, seed: u64) -> Self {
        Self {
            panel,
            hierarchy,
            returns: None,
            factors: None,
            response,
            preprocess: PreprocessConfig::default(),
            hvs: HvsConfig::default(),
            toggles: Toggles::default(),
            window_years: default_window(),
            paired_method: PairedMethod::default(),
            output_dir,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        let needs_returns = !matches!(self.response, ResponseMode::PrecomputedColumn(_));
        if needs_returns && self.returns.is_none() {
            return Err(HvsError::InvalidInput("this response mode needs a returns file".into()));
        }
        if self.hvs.cv.n_folds < 2 {
            return Err(HvsError::InvalidInput("cross-validation needs at least 2 folds".into()));
        }
        if self.window_years == 0 {
            return Err(HvsError::InvalidInput("window_years must be positive".into()));
        }
        let inputs = [Some(&self.panel), Some(&self.hierarchy), self.returns.as_ref(), self.factors.as_ref()];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(HvsError::InvalidInput(format!("input file {} not found", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the output directory blanked, so
    /// the same run written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn effective_hvs(&self) -> HvsConfig {
        let mut h = self.hvs.clone();
        h.cv.seed = self.seed;
        h
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub body: T,
}

pub mod schema {
    pub const PREPROCESS: &str = "hvs-preprocess/1";
    pub const RESULT: &str = "hvs-result/1";
    pub const IMPORTANCE: &str = "hvs-importance/1";
    pub const PIE: &str = "hvs-pie/1";
    pub const BENCHMARK: &str = "hvs-benchmark/1";
    pub const BENCHMARK_DETAIL: &str = "hvs-benchmark-detail/1";
    pub const VALIDATION: &str = "hvs-validation/1";
    pub const VALIDATION_OBS: &str = "hvs-validation-obs/1";
    pub const PAIRS: &str = "hvs-pairs/1";
    pub const FOLDS: &str = "hvs-folds/1";
    pub const BOX_COX: &str = "hvs-boxcox/1";
    pub const BOX_COX_PROFILE: &str = "hvs-boxcox-profile/1";
    pub const FACTORS: &str = "hvs-factors/1";
    pub const FIG_CATEGORY: &str = "hvs-fig-category/1";
    pub const FIG_STEPS: &str = "hvs-fig-steps/1";
}

pub fn header_line(h: &ArtifactHeader) -> String {
    format!("# schema={} config_hash={} seed={}\n", h.schema, h.config_hash, h.seed)
}

/// Parses a CSV artifact, rejecting any schema other than `expected`.
pub fn parse_csv_artifact(text: &str, expected: &str) -> Result<(ArtifactHeader, Vec<String>, Vec<Vec<String>>)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let fields: BTreeMap<&str, &str> = first
        .strip_prefix('#')
        .ok_or_else(|| HvsError::InvalidInput("artifact has no header line".into()))?
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let schema = fields.get("schema").copied().unwrap_or("");
    if schema != expected {
        return Err(HvsError::SchemaVersion {
            found: schema.into(),
            expected: expected.into(),
        });
    }
    let header = ArtifactHeader {
        schema: schema.into(),
        config_hash: fields.get("config_hash").copied().unwrap_or("").into(),
        seed: fields
            .get("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| HvsError::InvalidInput("artifact header has no seed".into()))?,
    };
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let columns = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for r in rdr.records() {
        rows.push(r?.iter().map(str::to_owned).collect());
    }
    Ok((header, columns, rows))
}

/// Parses a JSON artifact, rejecting any schema other than `expected`.
pub fn parse_json_artifact<T: DeserializeOwned>(text: &str, expected: &str) -> Result<Envelope<T>> {
    let raw: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if raw.schema != expected {
        return Err(HvsError::SchemaVersion {
            found: raw.schema,
            expected: expected.into(),
        });
    }
    Ok(Envelope {
        schema: raw.schema,
        config_hash: raw.config_hash,
        seed: raw.seed,
        body: serde_json::from_value(raw.body)?,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

struct Writer<'a> {
    dir: &'a Path,
    hash: String,
    seed: u64,
    written: Vec<PathBuf>,
}

impl Writer<'_> {
    fn header(&self, schema: &str) -> ArtifactHeader {
        ArtifactHeader {
            schema: schema.into(),
            config_hash: self.hash.clone(),
            seed: self.seed,
        }
    }

    fn csv(&mut self, name: &str, schema: &str, columns: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut buf = header_line(&self.header(schema)).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(columns)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
        }
        self.put(name, buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, schema: &str, body: &T) -> Result<()> {
        let env = Envelope {
            schema: schema.to_string(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            body,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.put(name, text.into_bytes())
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessArtifact {
    pub response_mode: ResponseMode,
    /// Rows removed because their response could not be formed.
    pub response_undefined: Vec<ObsKey>,
    pub log: PreprocessLog,
}

/// The panel with its response attached, plus the factor column ids.
pub struct LoadedInputs {
    pub data: PanelDataset,
    pub tree: HierarchyTree,
    pub factors: Vec<String>,
    pub response_undefined: Vec<ObsKey>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<LoadedInputs> {
    let tree = read_hierarchy(&cfg.hierarchy)?;
    let violations = validate_tree(&tree);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(HvsError::InvalidInput(format!("hierarchy: {}", list.join("; "))));
    }
    let panel = read_panel(&cfg.panel, Some(&tree))?;
    let (data, undefined) = match &cfg.response {
        ResponseMode::PrecomputedColumn(name) => take_response_column(panel, name)?,
        mode => {
            let path = cfg
                .returns
                .as_ref()
                .ok_or_else(|| HvsError::InvalidInput("returns file required".into()))?;
            let returns = read_returns(path)?;
            let measure = if *mode == ResponseMode::ReturnsResponse {
                ReturnsMeasure::AnnualReturn
            } else {
                ReturnsMeasure::LogVolatility
            };
            let (y, _) = response_from_returns(panel.keys(), &returns, measure, &cfg.preprocess);
            attach_response(panel, y)?
        }
    };
    let (data, factors) = match &cfg.factors {
        Some(p) => read_factors(data, p)?,
        None => (data, Vec::new()),
    };
    Ok(LoadedInputs {
        data,
        tree,
        factors,
        response_undefined: undefined,
    })
}

/// `(λ, log-likelihood)` pairs across the Box-Cox grid.
pub type LikelihoodProfile = Vec<(f64, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxRow {
    pub form: String,
    pub lambda: Option<f64>,
    pub jb_statistic: f64,
    pub jb_p_value: f64,
    pub r2: f64,
    pub n: usize,
}

/// Response-form comparison: the response in levels, in logs and at the
/// profile-likelihood Box-Cox exponent, each refitted through the
/// selection and judged by the normality of the Step 2 residuals.
pub fn box_cox_table(
    data: &PanelDataset,
    tree: &HierarchyTree,
    mode: &ResponseMode,
    cfg: &HvsConfig,
) -> Result<(Vec<BoxCoxRow>, Option<LikelihoodProfile>)> {
    let y = data.require_response()?;
    let level: Vec<f64> = match mode {
        ResponseMode::LogVolatilityFromReturns => y.iter().map(|v| v.exp()).collect(),
        _ => y.to_vec(),
    };
    let mut forms: Vec<(String, Option<f64>, Vec<f64>)> = vec![("level".into(), Some(1.0), level.clone())];
    let mut profile = None;
    if level.iter().all(|v| *v > 0.0) {
        forms.push(("log".into(), Some(0.0), level.iter().map(|v| v.ln()).collect()));
        let scan = box_cox_scan(&level, &default_box_cox_grid())?;
        let lam = scan.lambda_hat;
        forms.push(("box_cox".into(), Some(lam), level.iter().map(|v| box_cox(*v, lam)).collect()));
        profile = Some(scan.profile);
    } else {
        forms[0].1 = None;
    }
    let mut rows = Vec::with_capacity(forms.len());
    for (form, lambda, resp) in forms {
        let d = data.clone().with_response(Some(resp))?;
        let res = run_hvs(&d, tree, cfg).map_err(|e| e.in_stage(format!("box-cox {form}")))?;
        let jb = jarque_bera(&res.step2.fit.residuals)?;
        rows.push(BoxCoxRow {
            form,
            lambda,
            jb_statistic: jb.statistic,
            jb_p_value: jb.p_value,
            r2: res.step2.fit.r2,
            n: res.step2.fit.n,
        });
    }
    Ok((rows, profile))
}

const GREENS: [&str; 5] = ["#1b5e20", "#2e7d32", "#43a047", "#66bb6a", "#a5d6a7"];
const REDS: [&str; 5] = ["#b71c1c", "#c62828", "#e53935", "#ef5350", "#ef9a9a"];
const BLUES: [&str; 5] = ["#0d47a1", "#1565c0", "#1e88e5", "#42a5f5", "#90caf9"];

fn family(p: Pillar) -> (&'static str, &'static [&'static str; 5]) {
    match p {
        Pillar::E => ("green", &GREENS),
        Pillar::S => ("red", &REDS),
        Pillar::G => ("blue", &BLUES),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieSlice {
    pub category: String,
    pub pillar: Pillar,
    pub pct: f64,
    pub color: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieData {
    pub color_families: BTreeMap<Pillar, String>,
    pub slices: Vec<PieSlice>,
}

/// Pie slices in tree order with per-pillar colour families. Categories
/// without mass are absent.
pub fn pie_data(res: &HvsResult, tree: &HierarchyTree) -> PieData {
    let mut shade: BTreeMap<Pillar, usize> = BTreeMap::new();
    let mut slices = Vec::new();
    for c in &tree.categories {
        if let Some(imp) = res.importance.per_category.get(&c.id) {
            let (_, shades) = family(c.pillar_id);
            let i = shade.entry(c.pillar_id).or_default();
            slices.push(PieSlice {
                category: c.id.clone(),
                pillar: c.pillar_id,
                pct: imp.pct,
                color: shades[*i % shades.len()].to_string(),
            });
            *i += 1;
        }
    }
    PieData {
        color_families: Pillar::ALL.iter().map(|&p| (p, family(p).0.to_string())).collect(),
        slices,
    }
}

fn fit_line(label: &str, fit: &ModelFit, selected: usize) -> Vec<String> {
    vec![
        label.to_string(),
        selected.to_string(),
        fmt_f64(fit.r2),
        fmt_f64(fit.adj_r2),
        fmt_f64(fit.pct_dev),
        opt(fit.aic),
        opt(fit.bic),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub files: Vec<PathBuf>,
    pub selected: Vec<String>,
}

fn write_validation(w: &mut Writer, tag: &str, rep: &ValidationReport, method: PairedMethod) -> Result<()> {
    let rows = rep
        .models
        .values()
        .map(|m| {
            vec![
                m.model_label.clone(),
                m.in_sample.len().to_string(),
                fmt_f64(m.is_mse),
                m.oos.len().to_string(),
                fmt_f64(m.oos_mse),
            ]
        })
        .collect();
    w.csv(
        &format!("validation_{tag}.csv"),
        schema::VALIDATION,
        &["model", "n_in_sample", "is_mse", "n_oos", "oos_mse"],
        rows,
    )?;
    let mut obs = Vec::new();
    for m in rep.models.values() {
        for (sample, recs) in [("oos", &m.oos), ("is", &m.in_sample)] {
            for r in recs {
                obs.push(vec![
                    m.model_label.clone(),
                    sample.to_string(),
                    r.key.company.clone(),
                    r.key.year.to_string(),
                    fmt_f64(r.prediction),
                    fmt_f64(r.actual),
                    fmt_f64(r.squared_error),
                ]);
            }
        }
    }
    w.csv(
        &format!("validation_{tag}_obs.csv"),
        schema::VALIDATION_OBS,
        &["model", "sample", "company_id", "year", "prediction", "actual", "squared_error"],
        obs,
    )?;
    let pairs = pairwise_tests(rep, method)?
        .into_iter()
        .map(|p| {
            vec![
                p.a,
                p.b,
                format!("{:?}", p.oos.method).to_lowercase(),
                fmt_f64(p.in_sample.statistic),
                fmt_f64(p.in_sample.p_value),
                fmt_f64(p.oos.statistic),
                fmt_f64(p.oos.p_value),
            ]
        })
        .collect();
    w.csv(
        &format!("validation_{tag}_pairs.csv"),
        schema::PAIRS,
        &["a", "b", "method", "is_statistic", "is_p_value", "oos_statistic", "oos_p_value"],
        pairs,
    )?;
    w.json(&format!("validation_{tag}_folds.json"), schema::FOLDS, &rep.folds)
}

/// Loads inputs, runs the pipeline and writes every enabled artifact into
/// `cfg.output_dir`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let hvs_cfg = cfg.effective_hvs();
    let mut w = Writer {
        dir: &cfg.output_dir,
        hash: cfg.hash(),
        seed: cfg.seed,
        written: Vec::new(),
    };
    let inputs = load_inputs(cfg)?;
    let tree = &inputs.tree;
    let (data, log) = preprocess(&inputs.data, tree, &cfg.preprocess).map_err(|e| e.in_stage("preprocess"))?;
    w.json(
        "preprocess_log.json",
        schema::PREPROCESS,
        &PreprocessArtifact {
            response_mode: cfg.response.clone(),
            response_undefined: inputs.response_undefined.clone(),
            log,
        },
    )?;

    let res = run_hvs(&data, tree, &hvs_cfg)?;
    w.json("hvs_result.json", schema::RESULT, &res)?;

    let imp_rows = tree
        .categories
        .iter()
        .filter_map(|c| {
            res.importance.per_category.get(&c.id).map(|imp| {
                vec![
                    c.id.clone(),
                    c.pillar_id.to_string(),
                    fmt_f64(imp.score),
                    fmt_f64(imp.pct),
                    res.importance.member_indices.get(&c.id).map(|m| m.join(";")).unwrap_or_default(),
                ]
            })
        })
        .collect();
    w.csv(
        "importance.csv",
        schema::IMPORTANCE,
        &["category", "pillar", "score", "pct", "members"],
        imp_rows,
    )?;
    w.json("importance_pie.json", schema::PIE, &pie_data(&res, tree))?;

    let mut cat_rows = Vec::new();
    let mut step_rows = Vec::new();
    for c in &tree.categories {
        if let Some(sel) = res.step1.get(&c.id) {
            let mut row = vec![c.id.clone(), c.pillar_id.to_string()];
            row.extend(fit_line("step1", &sel.fit, sel.selected.len()).into_iter().skip(1));
            cat_rows.push(row);
            let kept = sel.selected.iter().filter(|id| res.step2.selected.contains(id)).count();
            step_rows.push(vec![
                c.id.clone(),
                sel.selected.len().to_string(),
                kept.to_string(),
                fmt_f64(sel.fit.adj_r2),
            ]);
        }
    }
    for (label, sel) in [("step2", &res.step2), ("step3", &res.step3)] {
        let mut row = vec![format!("all:{label}"), String::new()];
        row.extend(fit_line(label, &sel.fit, sel.selected.len()).into_iter().skip(1));
        cat_rows.push(row);
    }
    w.csv(
        "fig_category_fit.csv",
        schema::FIG_CATEGORY,
        &["category", "pillar", "selected", "r2", "adj_r2", "pct_dev", "aic", "bic"],
        cat_rows,
    )?;
    step_rows.push(vec![
        "all".into(),
        res.step1_union(tree).len().to_string(),
        res.step2.selected.len().to_string(),
        fmt_f64(res.step2.fit.adj_r2),
    ]);
    w.csv(
        "fig_step_comparison.csv",
        schema::FIG_STEPS,
        &["category", "step1_selected", "kept_in_step2", "adj_r2"],
        step_rows,
    )?;

    if cfg.toggles.benchmarks {
        let suite = benchmark_suite(&data, tree, &res, &hvs_cfg).map_err(|e| e.in_stage("benchmarks"))?;
        let rows = suite
            .iter()
            .map(|b| {
                let r = BenchmarkRow::from(b);
                vec![
                    r.label,
                    r.selected.to_string(),
                    fmt_f64(r.pct_dev),
                    opt(r.aic),
                    opt(r.bic),
                    fmt_f64(r.is_mse),
                    r.guard_hit.to_string(),
                ]
            })
            .collect();
        w.csv(
            "benchmark.csv",
            schema::BENCHMARK,
            &["model", "selected", "pct_dev", "aic", "bic", "is_mse", "guard_hit"],
            rows,
        )?;
        w.json("benchmark_detail.json", schema::BENCHMARK_DETAIL, &suite)?;
    }

    let vcfg = ValidationConfig {
        window_years: cfg.window_years,
        preprocess: cfg.preprocess,
        hvs: hvs_cfg.clone(),
        benchmarks: if cfg.toggles.validate_benchmarks {
            BenchmarkKind::ALL.to_vec()
        } else {
            Vec::new()
        },
    };
    if cfg.toggles.temporal {
        let rep = temporal_rolling_eval(&inputs.data, tree, &vcfg).map_err(|e| e.in_stage("temporal"))?;
        write_validation(&mut w, "temporal", &rep, cfg.paired_method)?;
    }
    if cfg.toggles.cross_sectional {
        let rep = cross_sectional_loco_eval(&inputs.data, tree, &vcfg).map_err(|e| e.in_stage("cross-sectional"))?;
        write_validation(&mut w, "cross_sectional", &rep, cfg.paired_method)?;
    }

    if cfg.toggles.box_cox {
        let (rows, profile) = box_cox_table(&data, tree, &cfg.response, &hvs_cfg)?;
        let table = rows
            .iter()
            .map(|r| {
                vec![
                    r.form.clone(),
                    opt(r.lambda),
                    fmt_f64(r.jb_statistic),
                    fmt_f64(r.jb_p_value),
                    fmt_f64(r.r2),
                    r.n.to_string(),
                ]
            })
            .collect();
        w.csv(
            "boxcox.csv",
            schema::BOX_COX,
            &["form", "lambda", "jb_statistic", "jb_p_value", "r2", "n"],
            table,
        )?;
        if let Some(p) = profile {
            let rows = p.iter().map(|(l, ll)| vec![fmt_f64(*l), fmt_f64(*ll)]).collect();
            w.csv("boxcox_profile.csv", schema::BOX_COX_PROFILE, &["lambda", "log_likelihood"], rows)?;
        }
    }

    if !inputs.factors.is_empty() {
        let aug: AugmentedFits = augment_with_factors(&res.step2.selected, &inputs.factors, &data, &hvs_cfg)
            .map_err(|e| e.in_stage("factors"))?;
        let rows = [
            ("factors_only", &aug.factors_only, aug.lambdas[0], inputs.factors.len()),
            ("esg_only", &aug.esg_only, aug.lambdas[1], res.step2.selected.len()),
            (
                "combined",
                &aug.combined,
                aug.lambdas[2],
                inputs.factors.len() + res.step2.selected.len(),
            ),
        ]
        .into_iter()
        .map(|(label, f, lambda, count)| {
            vec![
                label.to_string(),
                count.to_string(),
                fmt_f64(f.pct_dev),
                opt(f.aic),
                opt(f.bic),
                opt(lambda),
            ]
        })
        .collect();
        w.csv(
            "factors.csv",
            schema::FACTORS,
            &["model", "variables", "pct_dev", "aic", "bic", "lambda"],
            rows,
        )?;
    }

    Ok(RunSummary {
        config_hash: w.hash.clone(),
        files: w.written,
        selected: res.step2.selected.clone(),
    })
}
