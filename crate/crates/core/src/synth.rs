//! Planted-truth synthetic panels with the shape of an ESG vendor dataset.
//!
//! Numeric columns share a per-category latent factor, booleans are
//! Bernoulli, controversy columns are zero-inflated counts. The response is
//! an intercept plus a linear combination of sample-standardized true
//! columns plus Gaussian noise. Every draw comes from one seeded stream, so
//! a spec maps to exactly one dataset.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};
use crate::model::{
    CategoryNode, Column, HierarchyTree, ObsKey, PanelDataset, Pillar, PillarNode, VariableDescriptor,
    VariableKind,
};
use crate::preprocess::{ReturnRow, ReturnsSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryShape {
    pub id: String,
    pub pillar: Pillar,
    pub numeric: usize,
    #[serde(default)]
    pub boolean: usize,
    #[serde(default)]
    pub controversy: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissingRates {
    #[serde(default)]
    pub numeric: f64,
    #[serde(default)]
    pub boolean: f64,
    #[serde(default)]
    pub controversy: f64,
}

/// Adds a numeric column whose sample correlation with `source` equals
/// `correlation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearInjection {
    pub source: String,
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_companies: usize,
    pub n_years: usize,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    pub categories: Vec<CategoryShape>,
    /// True variables and their coefficients on the standardized scale.
    #[serde(default)]
    pub support: Vec<(String, f64)>,
    #[serde(default)]
    pub intercept: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub missing: MissingRates,
    #[serde(default)]
    pub collinear: Vec<CollinearInjection>,
    /// Share of each numeric column's variance carried by its category's
    /// latent factor.
    #[serde(default = "default_latent_share")]
    pub latent_share: f64,
    /// Standard deviation of a per-company additive effect on the response.
    #[serde(default)]
    pub company_effect_sd: f64,
    pub seed: u64,
}

fn default_first_year() -> i32 {
    2010
}

fn default_latent_share() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub support: BTreeMap<String, f64>,
    pub categories: BTreeSet<String>,
    pub intercept: f64,
    pub noise_sd: f64,
    /// Population variance of the planted linear signal.
    pub signal_variance: f64,
}

impl GroundTruth {
    pub fn ids(&self) -> BTreeSet<String> {
        self.support.keys().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub data: PanelDataset,
    pub tree: HierarchyTree,
    pub truth: GroundTruth,
}

pub fn numeric_id(category: &str, j: usize) -> String {
    format!("{category}_n{j:02}")
}

pub fn boolean_id(category: &str, j: usize) -> String {
    format!("{category}_b{j:02}")
}

pub fn controversy_id(category: &str, j: usize) -> String {
    format!("{category}_k{j:02}")
}

fn collinear_id(source: &str, i: usize) -> String {
    format!("{source}_cl{i}")
}

/// `count` categories split as evenly as possible over E, S, G.
pub fn uniform_categories(count: usize, numeric: usize, boolean: usize, controversy: usize) -> Vec<CategoryShape> {
    (0..count)
        .map(|c| CategoryShape {
            id: format!("c{:02}", c + 1),
            pillar: Pillar::ALL[c * 3 / count.max(1)],
            numeric,
            boolean,
            controversy,
        })
        .collect()
}

/// Coefficients `±1.0, ±0.8, ±0.6` cycled over `per_category` variables in
/// each listed category.
fn planted_support(categories: &[CategoryShape], per_category: &[usize]) -> Vec<(String, f64)> {
    const MAGNITUDES: [f64; 3] = [1.0, 0.8, 0.6];
    let mut out = Vec::new();
    let mut sign = 1.0;
    for (cat, &count) in categories.iter().zip(per_category) {
        for j in 0..count {
            out.push((numeric_id(&cat.id, j), sign * MAGNITUDES[j % 3]));
            sign = -sign;
        }
    }
    out
}

impl PlantSpec {
    /// 15 categories of 20 variables, 60 companies over 10 years, 12 true
    /// numeric variables spread over 5 categories, signal-to-noise ratio 2.
    pub fn standard(seed: u64) -> Self {
        let categories = uniform_categories(15, 14, 4, 2);
        let chosen: Vec<CategoryShape> = [0, 3, 6, 9, 12].iter().map(|&c| categories[c].clone()).collect();
        let support = planted_support(&chosen, &[3, 3, 2, 2, 2]);
        let mut spec = PlantSpec {
            n_companies: 60,
            n_years: 10,
            first_year: default_first_year(),
            categories,
            support,
            intercept: -3.5,
            noise_sd: 1.0,
            missing: MissingRates {
                numeric: 0.0,
                boolean: 0.05,
                controversy: 0.3,
            },
            collinear: Vec::new(),
            latent_share: default_latent_share(),
            company_effect_sd: 0.0,
            seed,
        };
        spec.set_snr(2.0);
        spec
    }

    /// The standard shape with no planted signal.
    pub fn null_design(seed: u64) -> Self {
        let mut spec = Self::standard(seed);
        spec.support.clear();
        spec.noise_sd = 0.5;
        spec
    }

    /// 20 companies over 10 years with 120 candidate variables, so each
    /// five-year training window has fewer rows than candidates.
    pub fn overfit_prone(seed: u64) -> Self {
        let categories = uniform_categories(15, 8, 0, 0);
        let chosen: Vec<CategoryShape> = [1, 6, 11].iter().map(|&c| categories[c].clone()).collect();
        let support = planted_support(&chosen, &[2, 2, 2]);
        let mut spec = PlantSpec {
            n_companies: 20,
            n_years: 10,
            first_year: default_first_year(),
            categories,
            support,
            intercept: -3.5,
            noise_sd: 1.0,
            missing: MissingRates::default(),
            collinear: Vec::new(),
            latent_share: default_latent_share(),
            company_effect_sd: 0.0,
            seed,
        };
        spec.set_snr(2.0);
        spec
    }

    /// Roughly the column count and row count of one vendor sector.
    pub fn sector_scale(seed: u64) -> Self {
        let mut spec = Self::standard(seed);
        spec.categories = uniform_categories(15, 17, 24, 0);
        spec.n_companies = 139;
        spec.n_years = 5;
        spec.set_snr(2.0);
        spec
    }

    /// Rescales `noise_sd` so that signal variance / noise variance = `snr`.
    pub fn set_snr(&mut self, snr: f64) {
        let v = self.signal_variance();
        if v > 0.0 && snr > 0.0 {
            self.noise_sd = (v / snr).sqrt();
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_companies * self.n_years
    }

    pub fn build_tree(&self) -> HierarchyTree {
        let mut tree = HierarchyTree {
            pillars: Pillar::ALL
                .iter()
                .map(|&p| PillarNode {
                    id: p,
                    name: p.default_name().into(),
                })
                .collect(),
            ..Default::default()
        };
        let push = |tree: &mut HierarchyTree, id: String, kind, cat: &CategoryShape| {
            tree.variables.push(VariableDescriptor {
                display_name: id.clone(),
                id,
                kind,
                category_id: cat.id.clone(),
                pillar_id: cat.pillar,
            });
        };
        for cat in &self.categories {
            tree.categories.push(CategoryNode {
                id: cat.id.clone(),
                name: cat.id.clone(),
                pillar_id: cat.pillar,
            });
            for j in 0..cat.numeric {
                push(&mut tree, numeric_id(&cat.id, j), VariableKind::Numeric, cat);
            }
            for j in 0..cat.boolean {
                push(&mut tree, boolean_id(&cat.id, j), VariableKind::Boolean, cat);
            }
            for j in 0..cat.controversy {
                push(&mut tree, controversy_id(&cat.id, j), VariableKind::Controversy, cat);
            }
        }
        for (i, inj) in self.collinear.iter().enumerate() {
            if let Some(src) = tree.variable(&inj.source).cloned() {
                push(
                    &mut tree,
                    collinear_id(&inj.source, i),
                    VariableKind::Numeric,
                    &CategoryShape {
                        id: src.category_id,
                        pillar: src.pillar_id,
                        numeric: 0,
                        boolean: 0,
                        controversy: 0,
                    },
                );
            }
        }
        tree
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HvsError::InvalidInput(m));
        if self.n_companies == 0 || self.n_years == 0 {
            return bad("n_companies and n_years must be positive".into());
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.latent_share) {
            return bad(format!("latent_share {} outside [0, 1]", self.latent_share));
        }
        if !(self.company_effect_sd >= 0.0) {
            return bad("company_effect_sd must be non-negative".into());
        }
        for (name, p) in [
            ("numeric", self.missing.numeric),
            ("boolean", self.missing.boolean),
            ("controversy", self.missing.controversy),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} missing rate {p} outside [0, 1]"));
            }
        }
        let mut cats = BTreeSet::new();
        for c in &self.categories {
            if !cats.insert(c.id.as_str()) {
                return bad(format!("duplicate category `{}`", c.id));
            }
        }
        let tree = self.build_tree();
        for inj in &self.collinear {
            match tree.variable(&inj.source) {
                Some(v) if v.kind == VariableKind::Numeric => {}
                _ => return bad(format!("collinear source `{}` is not a numeric variable", inj.source)),
            }
            if !(-1.0..=1.0).contains(&inj.correlation) {
                return bad(format!("correlation {} outside [-1, 1]", inj.correlation));
            }
        }
        let mut seen = BTreeSet::new();
        for (id, b) in &self.support {
            if tree.variable(id).is_none() {
                return bad(format!("support variable `{id}` is not generated"));
            }
            if !seen.insert(id) {
                return bad(format!("support variable `{id}` listed twice"));
            }
            if !b.is_finite() {
                return bad(format!("coefficient of `{id}` is not finite"));
            }
        }
        Ok(())
    }

    /// Population variance of the planted signal, computed from each
    /// column's loadings on the independent underlying draws.
    pub fn signal_variance(&self) -> f64 {
        let tree = self.build_tree();
        let loadings = self.loadings(&tree);
        let mut total: BTreeMap<String, f64> = BTreeMap::new();
        for (id, b) in &self.support {
            if let Some(l) = loadings.get(id) {
                for (factor, w) in l {
                    *total.entry(factor.clone()).or_default() += b * w;
                }
            }
        }
        total.values().map(|v| v * v).sum()
    }

    fn loadings(&self, tree: &HierarchyTree) -> BTreeMap<String, BTreeMap<String, f64>> {
        let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let shared = self.latent_share.sqrt();
        let own = (1.0 - self.latent_share).sqrt();
        let injected: BTreeSet<String> = (0..self.collinear.len())
            .map(|i| collinear_id(&self.collinear[i].source, i))
            .collect();
        for v in tree.variables.iter().filter(|v| !injected.contains(&v.id)) {
            let mut l = BTreeMap::new();
            if v.kind == VariableKind::Numeric {
                l.insert(format!("latent:{}", v.category_id), shared);
                l.insert(format!("own:{}", v.id), own);
            } else {
                l.insert(format!("own:{}", v.id), 1.0);
            }
            out.insert(v.id.clone(), l);
        }
        for (i, inj) in self.collinear.iter().enumerate() {
            let id = collinear_id(&inj.source, i);
            let mut l: BTreeMap<String, f64> = out
                .get(&inj.source)
                .map(|s| s.iter().map(|(k, w)| (k.clone(), inj.correlation * w)).collect())
                .unwrap_or_default();
            l.insert(format!("own:{id}"), (1.0 - inj.correlation * inj.correlation).sqrt());
            out.insert(id, l);
        }
        out
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn standardized(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    if sd > 0.0 {
        values.iter().map(|v| (v - mean) / sd).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Unit-variance noise that is exactly orthogonal (in sample) to `base`.
fn orthogonal_noise(rng: &mut ChaCha8Rng, base_std: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = base_std.iter().map(|_| normal(rng)).collect();
    let e = standardized(&e);
    let n1 = (base_std.len() as f64 - 1.0).max(1.0);
    let proj = e.iter().zip(base_std).map(|(a, b)| a * b).sum::<f64>() / n1;
    let resid: Vec<f64> = e.iter().zip(base_std).map(|(a, b)| a - proj * b).collect();
    standardized(&resid)
}

/// Generates the panel, its hierarchy and the planted truth.
pub fn generate(spec: &PlantSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let tree = spec.build_tree();
    let n = spec.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let keys: Vec<ObsKey> = (0..spec.n_companies)
        .flat_map(|c| {
            (0..spec.n_years).map(move |t| ObsKey::new(format!("co{:03}", c + 1), spec.first_year + t as i32))
        })
        .collect();

    let latents: BTreeMap<&str, Vec<f64>> = spec
        .categories
        .iter()
        .map(|c| (c.id.as_str(), (0..n).map(|_| normal(&mut rng)).collect()))
        .collect();
    let shared = spec.latent_share.sqrt();
    let own = (1.0 - spec.latent_share).sqrt();

    let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(String, VariableKind)> = Vec::new();
    for cat in &spec.categories {
        let f = &latents[cat.id.as_str()];
        for j in 0..cat.numeric {
            let offset = rng.random_range(-5.0..5.0);
            let scale = rng.random_range(0.5..5.0);
            let col = (0..n)
                .map(|i| offset + scale * (shared * f[i] + own * normal(&mut rng)))
                .collect();
            let id = numeric_id(&cat.id, j);
            raw.insert(id.clone(), col);
            order.push((id, VariableKind::Numeric));
        }
        for j in 0..cat.boolean {
            let p = rng.random_range(0.2..0.8);
            let col = (0..n).map(|_| f64::from(u8::from(rng.random_bool(p)))).collect();
            let id = boolean_id(&cat.id, j);
            raw.insert(id.clone(), col);
            order.push((id, VariableKind::Boolean));
        }
        for j in 0..cat.controversy {
            let rate = rng.random_range(0.5..3.0);
            let poisson = Poisson::new(rate).map_err(|e| HvsError::InvalidInput(e.to_string()))?;
            let col = (0..n)
                .map(|_| if rng.random_bool(0.7) { 0.0 } else { poisson.sample(&mut rng) })
                .collect();
            let id = controversy_id(&cat.id, j);
            raw.insert(id.clone(), col);
            order.push((id, VariableKind::Controversy));
        }
    }
    for (i, inj) in spec.collinear.iter().enumerate() {
        let base = standardized(&raw[&inj.source]);
        let e = orthogonal_noise(&mut rng, &base);
        let r = inj.correlation;
        let s = (1.0 - r * r).sqrt();
        let col = base.iter().zip(&e).map(|(b, e)| r * b + s * e).collect();
        let id = collinear_id(&inj.source, i);
        raw.insert(id.clone(), col);
        order.push((id, VariableKind::Numeric));
    }

    let mut y = vec![spec.intercept; n];
    for (id, b) in &spec.support {
        for (yi, z) in y.iter_mut().zip(standardized(&raw[id])) {
            *yi += b * z;
        }
    }
    if spec.company_effect_sd > 0.0 {
        for c in 0..spec.n_companies {
            let u = spec.company_effect_sd * normal(&mut rng);
            for t in 0..spec.n_years {
                y[c * spec.n_years + t] += u;
            }
        }
    }
    for yi in &mut y {
        *yi += spec.noise_sd * normal(&mut rng);
    }

    let mut columns = Vec::with_capacity(order.len());
    for (id, kind) in order {
        let rate = match kind {
            VariableKind::Numeric => spec.missing.numeric,
            VariableKind::Boolean => spec.missing.boolean,
            VariableKind::Controversy => spec.missing.controversy,
        };
        let values = raw
            .remove(&id)
            .unwrap_or_default()
            .into_iter()
            .map(|v| if rate > 0.0 && rng.random_bool(rate) { None } else { Some(v) })
            .collect();
        columns.push(Column::new(id, values));
    }

    let data = PanelDataset::new(keys, columns, Some(y))?;
    let support: BTreeMap<String, f64> = spec.support.iter().cloned().collect();
    let categories = support
        .keys()
        .filter_map(|id| tree.variable(id).map(|v| v.category_id.clone()))
        .collect();
    let truth = GroundTruth {
        support,
        categories,
        intercept: spec.intercept,
        noise_sd: spec.noise_sd,
        signal_variance: spec.signal_variance(),
    };
    Ok(SynthOutput { data, tree, truth })
}

/// The first `days` weekdays of `year`.
pub fn trading_days(year: i32, days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(days);
    let mut d = NaiveDate::from_ymd_opt(year, 1, 1).unwrap_or_default();
    while out.len() < days && d.year() == year {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap_or(d);
    }
    out
}

/// Daily returns whose per-row standard deviation is `exp(log_vol[i])` and
/// whose mean is `daily_mean`.
pub fn returns_with_volatility(
    keys: &[ObsKey],
    log_vol: &[f64],
    daily_mean: f64,
    days: usize,
    seed: u64,
) -> Result<ReturnsSeries> {
    if keys.len() != log_vol.len() {
        return Err(HvsError::DimensionMismatch("keys and log volatilities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(keys.len() * days);
    for (k, lv) in keys.iter().zip(log_vol) {
        let sd = lv.exp();
        for date in trading_days(k.year, days) {
            rows.push(ReturnRow {
                company: k.company.clone(),
                date,
                daily_return: daily_mean + sd * normal(&mut rng),
            });
        }
    }
    ReturnsSeries::new(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the truth is empty but something was found; only
    /// precision is meaningful then.
    pub precision_only: bool,
}

pub fn recovery_metrics<S: AsRef<str>>(truth: &BTreeSet<String>, found: &[S]) -> Recovery {
    let found: BTreeSet<&str> = found.iter().map(AsRef::as_ref).collect();
    let hits = found.iter().filter(|f| truth.contains(**f)).count() as f64;
    if truth.is_empty() {
        let empty = found.is_empty();
        let v = if empty { 1.0 } else { 0.0 };
        return Recovery {
            precision: v,
            recall: v,
            f1: v,
            precision_only: !empty,
        };
    }
    let precision = if found.is_empty() { 0.0 } else { hits / found.len() as f64 };
    let recall = hits / truth.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Recovery {
        precision,
        recall,
        f1,
        precision_only: false,
    }
}
