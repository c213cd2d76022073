//! Readers and writers for the hierarchy, panel, returns and factor files.
//!
//! * Hierarchy: JSON document, pillars → categories → variables, plus
//!   `exogenous` and `ignored` id lists.
//! * Panel: delimited text, header `company_id,year,<variable ids…>`,
//!   missing cell = empty field.
//! * Returns: delimited text `company_id,date,daily_return` with ISO-8601
//!   dates.
//! * Factors: delimited text keyed by `company_id,year` or by `year` alone
//!   (broadcast to every company in that year).
//!
//! Panel files may start with a `# schema=hvs-panel/1` line; an unknown
//! schema is rejected.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{HvsError, Result};
use crate::model::{
    CategoryNode, Column, HierarchyTree, ObsKey, PanelDataset, Pillar, PillarNode, VariableDescriptor,
    VariableKind,
};
use crate::preprocess::{ReturnRow, ReturnsSeries};

pub const HIERARCHY_SCHEMA: &str = "hvs-hierarchy/1";
pub const PANEL_SCHEMA: &str = "hvs-panel/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFile {
    #[serde(default = "hierarchy_schema")]
    pub schema: String,
    pub pillars: Vec<PillarEntry>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub ignored: Vec<String>,
}

fn hierarchy_schema() -> String {
    HIERARCHY_SCHEMA.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PillarEntry {
    pub id: Pillar,
    #[serde(default)]
    pub name: String,
    pub categories: Vec<CategoryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub variables: Vec<VariableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub kind: VariableKind,
}

impl From<&HierarchyTree> for HierarchyFile {
    fn from(tree: &HierarchyTree) -> Self {
        let pillars = tree
            .pillars
            .iter()
            .map(|p| PillarEntry {
                id: p.id,
                name: p.name.clone(),
                categories: tree
                    .categories
                    .iter()
                    .filter(|c| c.pillar_id == p.id)
                    .map(|c| CategoryEntry {
                        id: c.id.clone(),
                        name: c.name.clone(),
                        variables: tree
                            .variables
                            .iter()
                            .filter(|v| v.category_id == c.id)
                            .map(|v| VariableEntry {
                                id: v.id.clone(),
                                name: v.display_name.clone(),
                                kind: v.kind,
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        HierarchyFile {
            schema: HIERARCHY_SCHEMA.into(),
            pillars,
            exogenous: tree.exogenous.clone(),
            ignored: tree.ignored.clone(),
        }
    }
}

impl From<HierarchyFile> for HierarchyTree {
    fn from(file: HierarchyFile) -> Self {
        let mut tree = HierarchyTree {
            exogenous: file.exogenous,
            ignored: file.ignored,
            ..Default::default()
        };
        for p in file.pillars {
            let pname = if p.name.is_empty() { p.id.default_name().to_string() } else { p.name };
            tree.pillars.push(PillarNode { id: p.id, name: pname });
            for c in p.categories {
                let cname = if c.name.is_empty() { c.id.clone() } else { c.name };
                for v in c.variables {
                    tree.variables.push(VariableDescriptor {
                        display_name: if v.name.is_empty() { v.id.clone() } else { v.name },
                        id: v.id,
                        kind: v.kind,
                        category_id: c.id.clone(),
                        pillar_id: p.id,
                    });
                }
                tree.categories.push(CategoryNode {
                    id: c.id,
                    name: cname,
                    pillar_id: p.id,
                });
            }
        }
        tree
    }
}

pub fn parse_hierarchy(text: &str) -> Result<HierarchyTree> {
    let file: HierarchyFile = serde_json::from_str(text)?;
    if file.schema != HIERARCHY_SCHEMA {
        return Err(HvsError::SchemaVersion {
            found: file.schema,
            expected: HIERARCHY_SCHEMA.into(),
        });
    }
    Ok(file.into())
}

pub fn read_hierarchy(path: &Path) -> Result<HierarchyTree> {
    parse_hierarchy(&std::fs::read_to_string(path)?)
}

pub fn hierarchy_to_string(tree: &HierarchyTree) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&HierarchyFile::from(tree))?;
    s.push('\n');
    Ok(s)
}

pub fn write_hierarchy(path: &Path, tree: &HierarchyTree) -> Result<()> {
    std::fs::write(path, hierarchy_to_string(tree)?)?;
    Ok(())
}

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

/// Strips an optional `# schema=…` first line and checks its version.
fn split_schema(text: &str, expected: &str) -> Result<String> {
    let mut body = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if let Some(rest) = line.strip_prefix('#') {
                let schema = rest
                    .split_whitespace()
                    .find_map(|kv| kv.strip_prefix("schema="))
                    .unwrap_or("");
                if schema != expected {
                    return Err(HvsError::SchemaVersion {
                        found: schema.to_string(),
                        expected: expected.to_string(),
                    });
                }
                continue;
            }
        }
        if line.starts_with('#') {
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    Ok(body)
}

fn parse_cell(field: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| {
        HvsError::InvalidInput(format!("row {row}, column `{col}`: cannot parse `{t}` as a number"))
    })
}

/// Reads a panel. Columns listed as ignored in `tree` are skipped;
/// columns listed as exogenous are flagged.
pub fn parse_panel(text: &str, delimiter: u8, tree: Option<&HierarchyTree>) -> Result<PanelDataset> {
    let body = split_schema(text, PANEL_SCHEMA)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.len() < 2 || headers[0] != "company_id" || headers[1] != "year" {
        return Err(HvsError::InvalidInput(
            "panel header must start with `company_id,year`".into(),
        ));
    }
    let wanted: Vec<(usize, &String)> = headers
        .iter()
        .enumerate()
        .skip(2)
        .filter(|(_, h)| !tree.is_some_and(|t| t.is_ignored(h)))
        .collect();
    let mut keys = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); wanted.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let company = rec.get(0).unwrap_or("").trim().to_string();
        let year: i32 = rec
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| HvsError::InvalidInput(format!("row {}: bad year", r + 1)))?;
        keys.push(ObsKey::new(company, year));
        for (slot, (c, id)) in wanted.iter().enumerate() {
            values[slot].push(parse_cell(rec.get(*c).unwrap_or(""), r + 1, id)?);
        }
    }
    let columns = wanted
        .iter()
        .zip(values)
        .map(|((_, id), v)| Column {
            id: (*id).clone(),
            exogenous: tree.is_some_and(|t| t.is_exogenous(id)),
            values: v,
        })
        .collect();
    PanelDataset::new(keys, columns, None)
}

pub fn read_panel(path: &Path, tree: Option<&HierarchyTree>) -> Result<PanelDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_panel(&text, delimiter_for(path), tree)
}

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_panel_to<W: Write>(out: W, data: &PanelDataset, response_column: Option<&str>) -> Result<()> {
    let mut out = out;
    writeln!(out, "# schema={PANEL_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["company_id".to_string(), "year".to_string()];
    header.extend(data.columns().iter().map(|c| c.id.clone()));
    if let Some(name) = response_column {
        header.push(name.to_string());
    }
    w.write_record(&header)?;
    let y = data.response();
    for (i, k) in data.keys().iter().enumerate() {
        let mut rec = vec![k.company.clone(), k.year.to_string()];
        for c in data.columns() {
            rec.push(c.values[i].map(fmt_f64).unwrap_or_default());
        }
        if response_column.is_some() {
            rec.push(y.map(|y| fmt_f64(y[i])).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel(path: &Path, data: &PanelDataset, response_column: Option<&str>) -> Result<()> {
    write_panel_to(File::create(path)?, data, response_column)
}

/// Moves column `name` into the response. Rows where it is missing are
/// removed and returned.
pub fn take_response_column(data: PanelDataset, name: &str) -> Result<(PanelDataset, Vec<ObsKey>)> {
    let (keys, columns, _) = data.into_parts();
    let pos = columns
        .iter()
        .position(|c| c.id == name)
        .ok_or_else(|| HvsError::InvalidInput(format!("response column `{name}` not in panel")))?;
    let mut columns = columns;
    let resp = columns.remove(pos);
    let rows: Vec<usize> = (0..keys.len()).filter(|&i| resp.values[i].is_some()).collect();
    let dropped: Vec<ObsKey> = (0..keys.len())
        .filter(|&i| resp.values[i].is_none())
        .map(|i| keys[i].clone())
        .collect();
    let y: Vec<f64> = rows.iter().map(|&i| resp.values[i].unwrap_or_default()).collect();
    let full = PanelDataset::new(keys, columns, None)?;
    let data = full.select_rows(&rows).with_response(Some(y))?;
    Ok((data, dropped))
}

/// Attaches a per-row response, removing rows where it is undefined.
pub fn attach_response(data: PanelDataset, response: Vec<Option<f64>>) -> Result<(PanelDataset, Vec<ObsKey>)> {
    if response.len() != data.n_rows() {
        return Err(HvsError::DimensionMismatch("response length".into()));
    }
    let rows: Vec<usize> = (0..data.n_rows()).filter(|&i| response[i].is_some()).collect();
    let dropped = (0..data.n_rows())
        .filter(|&i| response[i].is_none())
        .map(|i| data.keys()[i].clone())
        .collect();
    let y: Vec<f64> = rows.iter().filter_map(|&i| response[i]).collect();
    let out = data.select_rows(&rows).with_response(Some(y))?;
    Ok((out, dropped))
}

pub fn parse_returns<R: Read>(reader: R, delimiter: u8) -> Result<ReturnsSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["company_id", "date", "daily_return"] {
        return Err(HvsError::InvalidInput(
            "returns header must be `company_id,date,daily_return`".into(),
        ));
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(rec.get(1).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|e| HvsError::InvalidInput(format!("row {}: bad date: {e}", r + 1)))?;
        let v = parse_cell(rec.get(2).unwrap_or(""), r + 1, "daily_return")?
            .ok_or_else(|| HvsError::InvalidInput(format!("row {}: empty return", r + 1)))?;
        rows.push(ReturnRow {
            company: rec.get(0).unwrap_or("").trim().to_string(),
            date,
            daily_return: v,
        });
    }
    ReturnsSeries::new(rows)
}

pub fn read_returns(path: &Path) -> Result<ReturnsSeries> {
    parse_returns(BufReader::new(File::open(path)?), delimiter_for(path))
}

pub fn write_returns<W: Write>(out: W, returns: &ReturnsSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["company_id", "date", "daily_return"])?;
    for r in returns.rows() {
        w.write_record([r.company.clone(), r.date.format("%Y-%m-%d").to_string(), fmt_f64(r.daily_return)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a factor table and appends its columns to `data` as exogenous
/// columns, matched by `(company_id, year)` or by `year`.
pub fn merge_factors<R: BufRead>(data: PanelDataset, reader: R, delimiter: u8) -> Result<(PanelDataset, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let by_company = headers.first().map(String::as_str) == Some("company_id");
    let skip = if by_company { 2 } else { 1 };
    if headers.len() <= skip || headers[skip - 1] != "year" {
        return Err(HvsError::InvalidInput(
            "factor header must be `company_id,year,…` or `year,…`".into(),
        ));
    }
    let names: Vec<String> = headers[skip..].to_vec();
    let mut table: BTreeMap<(Option<String>, i32), Vec<f64>> = BTreeMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let company = by_company.then(|| rec.get(0).unwrap_or("").trim().to_string());
        let year: i32 = rec
            .get(skip - 1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| HvsError::InvalidInput(format!("factor row {}: bad year", r + 1)))?;
        let mut vals = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            vals.push(parse_cell(rec.get(skip + j).unwrap_or(""), r + 1, name)?.ok_or_else(|| {
                HvsError::InvalidInput(format!("factor row {}: `{name}` is empty", r + 1))
            })?);
        }
        table.insert((company, year), vals);
    }
    let (keys, mut columns, response) = data.into_parts();
    for (j, name) in names.iter().enumerate() {
        let values = keys
            .iter()
            .map(|k| {
                let key = (by_company.then(|| k.company.clone()), k.year);
                table.get(&key).map(|v| v[j])
            })
            .collect();
        columns.push(Column::exogenous(name.clone(), values));
    }
    Ok((PanelDataset::new(keys, columns, response)?, names))
}

pub fn read_factors(data: PanelDataset, path: &Path) -> Result<(PanelDataset, Vec<String>)> {
    merge_factors(data, BufReader::new(File::open(path)?), delimiter_for(path))
}
