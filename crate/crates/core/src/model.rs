//! Shared domain types: the variable hierarchy, the company-year panel, and
//! the result records produced by fitting and selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Boolean,
    Numeric,
    Controversy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pillar {
    E,
    S,
    G,
}

impl Pillar {
    pub const ALL: [Pillar; 3] = [Pillar::E, Pillar::S, Pillar::G];

    pub fn default_name(self) -> &'static str {
        match self {
            Pillar::E => "Environmental",
            Pillar::S => "Social",
            Pillar::G => "Governance",
        }
    }
}

impl fmt::Display for Pillar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pillar::E => "E",
            Pillar::S => "S",
            Pillar::G => "G",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableDescriptor {
    pub id: String,
    pub display_name: String,
    pub kind: VariableKind,
    pub category_id: String,
    pub pillar_id: Pillar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PillarNode {
    pub id: Pillar,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryNode {
    pub id: String,
    pub name: String,
    pub pillar_id: Pillar,
}

/// Overall → pillars → categories → raw variables.
///
/// `exogenous` lists non-hierarchy columns (market factors, aggregated
/// scores) that may appear in a panel; `ignored` lists columns dropped at
/// ingestion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTree {
    pub pillars: Vec<PillarNode>,
    pub categories: Vec<CategoryNode>,
    pub variables: Vec<VariableDescriptor>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub ignored: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeViolation {
    DuplicateVariable(String),
    DuplicateCategory(String),
    DuplicatePillar(Pillar),
    MissingPillar(Pillar),
    UnknownCategory { variable: String, category: String },
    PillarMismatch { variable: String, expected: Pillar, found: Pillar },
    CategoryWithoutPillar { category: String, pillar: Pillar },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::DuplicateVariable(id) => write!(f, "duplicate variable id `{id}`"),
            TreeViolation::DuplicateCategory(id) => write!(f, "duplicate category id `{id}`"),
            TreeViolation::DuplicatePillar(p) => write!(f, "duplicate pillar `{p}`"),
            TreeViolation::MissingPillar(p) => write!(f, "missing pillar `{p}`"),
            TreeViolation::UnknownCategory { variable, category } => {
                write!(f, "variable `{variable}` references unknown category `{category}`")
            }
            TreeViolation::PillarMismatch {
                variable,
                expected,
                found,
            } => write!(
                f,
                "variable `{variable}` has pillar `{found}` but its category belongs to `{expected}`"
            ),
            TreeViolation::CategoryWithoutPillar { category, pillar } => {
                write!(f, "category `{category}` references absent pillar `{pillar}`")
            }
        }
    }
}

/// Checks every structural invariant of a hierarchy. Violations are
/// returned as data; an empty list means the tree is well formed.
pub fn validate_tree(tree: &HierarchyTree) -> Vec<TreeViolation> {
    let mut out = Vec::new();

    let mut seen_pillars = BTreeSet::new();
    for p in &tree.pillars {
        if !seen_pillars.insert(p.id) {
            out.push(TreeViolation::DuplicatePillar(p.id));
        }
    }
    for p in Pillar::ALL {
        if !seen_pillars.contains(&p) {
            out.push(TreeViolation::MissingPillar(p));
        }
    }

    let mut categories: BTreeMap<&str, Pillar> = BTreeMap::new();
    for c in &tree.categories {
        if categories.insert(c.id.as_str(), c.pillar_id).is_some() {
            out.push(TreeViolation::DuplicateCategory(c.id.clone()));
        }
        if !seen_pillars.contains(&c.pillar_id) {
            out.push(TreeViolation::CategoryWithoutPillar {
                category: c.id.clone(),
                pillar: c.pillar_id,
            });
        }
    }

    let mut seen_vars = BTreeSet::new();
    for v in &tree.variables {
        if !seen_vars.insert(v.id.as_str()) {
            out.push(TreeViolation::DuplicateVariable(v.id.clone()));
        }
        match categories.get(v.category_id.as_str()) {
            None => out.push(TreeViolation::UnknownCategory {
                variable: v.id.clone(),
                category: v.category_id.clone(),
            }),
            Some(&p) if p != v.pillar_id => out.push(TreeViolation::PillarMismatch {
                variable: v.id.clone(),
                expected: p,
                found: v.pillar_id,
            }),
            Some(_) => {}
        }
    }
    out
}

impl HierarchyTree {
    pub fn variable(&self, id: &str) -> Option<&VariableDescriptor> {
        self.variables.iter().find(|v| v.id == id)
    }

    pub fn category(&self, id: &str) -> Option<&CategoryNode> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn variable_index(&self) -> BTreeMap<&str, &VariableDescriptor> {
        self.variables.iter().map(|v| (v.id.as_str(), v)).collect()
    }

    pub fn is_exogenous(&self, id: &str) -> bool {
        self.exogenous.iter().any(|e| e == id)
    }

    pub fn is_ignored(&self, id: &str) -> bool {
        self.ignored.iter().any(|e| e == id)
    }

    /// Variable ids of one category, in tree order.
    pub fn members(&self, category_id: &str) -> Vec<&str> {
        self.variables
            .iter()
            .filter(|v| v.category_id == category_id)
            .map(|v| v.id.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObsKey {
    pub company: String,
    pub year: i32,
}

impl ObsKey {
    pub fn new(company: impl Into<String>, year: i32) -> Self {
        Self {
            company: company.into(),
            year,
        }
    }
}

impl fmt::Display for ObsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.company, self.year)
    }
}

/// One panel column. `None` is the missing marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub id: String,
    #[serde(default)]
    pub exogenous: bool,
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(id: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            id: id.into(),
            exogenous: false,
            values,
        }
    }

    pub fn exogenous(id: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            id: id.into(),
            exogenous: true,
            values,
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Company-year observations, column-major, with an optional response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    keys: Vec<ObsKey>,
    columns: Vec<Column>,
    response: Option<Vec<f64>>,
}

impl PanelDataset {
    pub fn new(keys: Vec<ObsKey>, columns: Vec<Column>, response: Option<Vec<f64>>) -> Result<Self> {
        let n = keys.len();
        let mut seen = BTreeSet::new();
        for k in &keys {
            if !seen.insert(k) {
                return Err(HvsError::InvalidInput(format!("duplicate observation key {k}")));
            }
        }
        let mut ids = BTreeSet::new();
        for c in &columns {
            if c.values.len() != n {
                return Err(HvsError::DimensionMismatch(format!(
                    "column `{}` has {} values for {} rows",
                    c.id,
                    c.values.len(),
                    n
                )));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(HvsError::InvalidInput(format!("duplicate column id `{}`", c.id)));
            }
        }
        if let Some(y) = &response {
            if y.len() != n {
                return Err(HvsError::DimensionMismatch(format!(
                    "response has {} values for {} rows",
                    y.len(),
                    n
                )));
            }
        }
        Ok(Self {
            keys,
            columns,
            response,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[ObsKey] {
        &self.keys
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, id: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.id == id)
    }

    pub fn column_ids(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.id.as_str()).collect()
    }

    /// Ids of all non-exogenous columns, in column order.
    pub fn esg_column_ids(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| !c.exogenous)
            .map(|c| c.id.clone())
            .collect()
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    pub fn require_response(&self) -> Result<&[f64]> {
        self.response()
            .ok_or_else(|| HvsError::InvalidInput("dataset has no response column".into()))
    }

    pub fn with_response(self, response: Option<Vec<f64>>) -> Result<Self> {
        Self::new(self.keys, self.columns, response)
    }

    pub fn with_columns(self, columns: Vec<Column>) -> Result<Self> {
        Self::new(self.keys, columns, self.response)
    }

    pub fn into_parts(self) -> (Vec<ObsKey>, Vec<Column>, Option<Vec<f64>>) {
        (self.keys, self.columns, self.response)
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().any(|c| c.values.iter().any(Option::is_none))
    }

    /// New dataset with only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let keys = rows.iter().map(|&i| self.keys[i].clone()).collect();
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                id: c.id.clone(),
                exogenous: c.exogenous,
                values: rows.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();
        let response = self
            .response
            .as_ref()
            .map(|y| rows.iter().map(|&i| y[i]).collect());
        Self {
            keys,
            columns,
            response,
        }
    }

    pub fn rows_where(&self, mut pred: impl FnMut(&ObsKey) -> bool) -> Vec<usize> {
        self.keys
            .iter()
            .enumerate()
            .filter(|(_, k)| pred(k))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.keys.iter().map(|k| k.year).collect();
        set.into_iter().collect()
    }

    pub fn companies(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.keys.iter().map(|k| k.company.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Dense design matrix for the requested columns. Fails on missing
    /// cells or unknown ids.
    pub fn design_matrix<S: AsRef<str>>(&self, ids: &[S]) -> Result<DMatrix<f64>> {
        let n = self.n_rows();
        let mut m = DMatrix::zeros(n, ids.len());
        for (j, id) in ids.iter().enumerate() {
            let id = id.as_ref();
            let col = self
                .column(id)
                .ok_or_else(|| HvsError::InvalidInput(format!("no column `{id}` in dataset")))?;
            for (i, v) in col.values.iter().enumerate() {
                m[(i, j)] = v.ok_or_else(|| {
                    HvsError::InvalidInput(format!("missing value in `{id}` at {}", self.keys[i]))
                })?;
            }
        }
        Ok(m)
    }

    pub fn response_vector(&self) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.require_response()?))
    }
}

/// One fitted linear model together with its summary statistics.
///
/// `aic` and `bic` are `None` when the residual sum of squares is exactly
/// zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub rss: f64,
    pub tss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub pct_dev: f64,
    pub standardized: bool,
    pub penalized: bool,
    /// Columns dropped as linearly dependent on earlier columns.
    #[serde(default)]
    pub deficient: Vec<String>,
}

impl ModelFit {
    pub fn coefficient(&self, id: &str) -> f64 {
        self.coefficients.get(id).copied().unwrap_or(0.0)
    }

    pub fn mse(&self) -> f64 {
        self.rss / self.n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Step1(String),
    Step2,
    Step3,
    Benchmark(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveAction {
    Add,
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub action: MoveAction,
    pub variable: String,
    pub criterion_before: f64,
    pub criterion_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub stage: Stage,
    pub selected: Vec<String>,
    pub fit: ModelFit,
    pub trace: Vec<TraceEntry>,
    /// Set when selection stopped because the term guard was reached
    /// rather than because no move improved the criterion.
    #[serde(default)]
    pub guard_hit: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryImportance {
    pub score: f64,
    pub pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub per_category: BTreeMap<String, CategoryImportance>,
    pub member_indices: BTreeMap<String, Vec<String>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_tree() -> HierarchyTree {
        let pillars = Pillar::ALL
            .iter()
            .map(|&p| PillarNode {
                id: p,
                name: p.default_name().into(),
            })
            .collect();
        let categories = vec![
            CategoryNode {
                id: "emissions".into(),
                name: "Emissions".into(),
                pillar_id: Pillar::E,
            },
            CategoryNode {
                id: "workforce".into(),
                name: "Workforce".into(),
                pillar_id: Pillar::S,
            },
            CategoryNode {
                id: "board".into(),
                name: "Board".into(),
                pillar_id: Pillar::G,
            },
        ];
        let var = |id: &str, cat: &str, p: Pillar| VariableDescriptor {
            id: id.into(),
            display_name: id.to_uppercase(),
            kind: VariableKind::Numeric,
            category_id: cat.into(),
            pillar_id: p,
        };
        HierarchyTree {
            pillars,
            categories,
            variables: vec![
                var("co2", "emissions", Pillar::E),
                var("turnover", "workforce", Pillar::S),
                var("board_size", "board", Pillar::G),
            ],
            exogenous: vec![],
            ignored: vec![],
        }
    }

    #[test]
    fn well_formed_tree_has_no_violations() {
        assert!(validate_tree(&small_tree()).is_empty());
    }

    #[test]
    fn unknown_category_is_reported() {
        let mut t = small_tree();
        t.variables[0].category_id = "nowhere".into();
        let v = validate_tree(&t);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], TreeViolation::UnknownCategory { variable, .. } if variable == "co2"));
    }

    #[test]
    fn duplicate_variable_is_reported() {
        let mut t = small_tree();
        let dup = t.variables[1].clone();
        t.variables.push(dup);
        assert_eq!(
            validate_tree(&t),
            vec![TreeViolation::DuplicateVariable("turnover".into())]
        );
    }

    #[test]
    fn pillar_mismatch_is_reported() {
        let mut t = small_tree();
        t.variables[2].pillar_id = Pillar::E;
        assert_eq!(validate_tree(&t).len(), 1);
    }

    #[test]
    fn missing_pillar_is_reported() {
        let mut t = small_tree();
        t.pillars.pop();
        let v = validate_tree(&t);
        assert!(v.contains(&TreeViolation::MissingPillar(Pillar::G)));
    }

    #[test]
    fn panel_rejects_duplicate_keys() {
        let keys = vec![ObsKey::new("a", 2020), ObsKey::new("a", 2020)];
        assert!(PanelDataset::new(keys, vec![], None).is_err());
    }

    #[test]
    fn panel_rejects_ragged_columns() {
        let keys = vec![ObsKey::new("a", 2020), ObsKey::new("b", 2020)];
        let cols = vec![Column::new("x", vec![Some(1.0)])];
        assert!(PanelDataset::new(keys, cols, None).is_err());
    }

    #[test]
    fn design_matrix_refuses_missing_cells() {
        let keys = vec![ObsKey::new("a", 2020), ObsKey::new("b", 2020)];
        let cols = vec![Column::new("x", vec![Some(1.0), None])];
        let d = PanelDataset::new(keys, cols, None).unwrap();
        assert!(d.has_missing());
        assert!(d.design_matrix(&["x"]).is_err());
    }
}
