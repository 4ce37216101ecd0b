//! Benchmark score tables and the category correlation structure derived from them.
//!
//! A [`ScoreMatrix`] holds one row per model and one column per benchmark
//! category. [`category_correlations`] computes the Pearson coefficient of
//! every pair of category columns across models; [`low_correlation_categories`]
//! then picks the categories that have at least one weakly-correlated partner.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default correlation threshold separating weak from strong category pairs.
pub const DEFAULT_TAU: f64 = 0.5;

/// Numeric slack admitted when validating correlation cells.
const RANGE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    Csv,
    Json,
}

impl ScoreFormat {
    /// Guesses the format from a file extension; anything but `.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => ScoreFormat::Json,
            _ => ScoreFormat::Csv,
        }
    }
}

/// Dense models x categories table of benchmark scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    model_ids: Vec<String>,
    category_ids: Vec<String>,
    /// Row-major, one row per model.
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct ScoreJson {
    models: Vec<String>,
    categories: Vec<String>,
    scores: Vec<Vec<serde_json::Value>>,
}

fn check_unique(ids: &[String], kind: &'static str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

impl ScoreMatrix {
    pub fn new(model_ids: Vec<String>, category_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        check_unique(&model_ids, "model")?;
        check_unique(&category_ids, "category")?;
        if rows.len() != model_ids.len() {
            return Err(Error::Parse(format!(
                "{} model ids but {} score rows",
                model_ids.len(),
                rows.len()
            )));
        }
        let width = category_ids.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (model, row) in model_ids.iter().zip(rows) {
            if row.len() != width {
                return Err(Error::RaggedRow {
                    model: model.clone(),
                    expected: width,
                    found: row.len(),
                });
            }
            for (category, v) in category_ids.iter().zip(&row) {
                if !v.is_finite() {
                    return Err(Error::NonFiniteScore {
                        model: model.clone(),
                        category: category.clone(),
                    });
                }
            }
            values.extend(row);
        }
        Ok(Self {
            model_ids,
            category_ids,
            values,
        })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn category_ids(&self) -> &[String] {
        &self.category_ids
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.category_ids.len()
    }

    pub fn get(&self, model: usize, category: usize) -> f64 {
        self.values[model * self.category_ids.len() + category]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let w = self.category_ids.len();
        &self.values[model * w..(model + 1) * w]
    }

    pub fn column(&self, category: usize) -> Vec<f64> {
        (0..self.model_ids.len()).map(|m| self.get(m, category)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_models()).map(|m| self.row(m).to_vec()).collect()
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == id)
    }

    pub fn category_index(&self, id: &str) -> Option<usize> {
        self.category_ids.iter().position(|c| c == id)
    }

    /// Unweighted mean of one model's row.
    pub fn macro_average(&self, model: usize) -> f64 {
        let row = self.row(model);
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "models": self.model_ids,
            "categories": self.category_ids,
            "scores": self.rows(),
        })
    }
}

/// Reads a score table from CSV or JSON.
pub fn load_scores<R: Read>(source: R, format: ScoreFormat) -> Result<ScoreMatrix> {
    match format {
        ScoreFormat::Csv => load_csv(source),
        ScoreFormat::Json => load_json(source),
    }
}

pub fn load_scores_path(path: &Path) -> Result<ScoreMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    load_scores(std::io::BufReader::new(file), ScoreFormat::from_path(path))
}

fn parse_cell(raw: &str, model: &str, category: &str) -> Result<f64> {
    let trimmed = raw.trim();
    let v: f64 = trimmed.parse().map_err(|_| Error::NonNumericScore {
        model: model.to_string(),
        category: category.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteScore {
            model: model.to_string(),
            category: category.to_string(),
        });
    }
    Ok(v)
}

fn load_csv<R: Read>(source: R) -> Result<ScoreMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(format!("csv header: {e}")))?
        .clone();
    let mut cells = header.iter().map(|s| s.trim().to_string());
    match cells.next() {
        Some(first) if first == "model" => {}
        Some(first) => {
            return Err(Error::Parse(format!(
                "first header cell must be \"model\", found {first:?}"
            )))
        }
        None => return Err(Error::Parse("empty csv header".into())),
    }
    let category_ids: Vec<String> = cells.collect();
    check_unique(&category_ids, "category")?;

    let mut model_ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("csv: {e}")))?;
        let mut fields = record.iter();
        let model = fields.next().unwrap_or_default().trim().to_string();
        if record.len() != category_ids.len() + 1 {
            return Err(Error::RaggedRow {
                model,
                expected: category_ids.len(),
                found: record.len().saturating_sub(1),
            });
        }
        let row = fields
            .zip(&category_ids)
            .map(|(cell, cat)| parse_cell(cell, &model, cat))
            .collect::<Result<Vec<_>>>()?;
        model_ids.push(model);
        rows.push(row);
    }
    ScoreMatrix::new(model_ids, category_ids, rows)
}

fn load_json<R: Read>(source: R) -> Result<ScoreMatrix> {
    let doc: ScoreJson =
        serde_json::from_reader(source).map_err(|e| Error::Parse(format!("score json: {e}")))?;
    check_unique(&doc.models, "model")?;
    check_unique(&doc.categories, "category")?;
    if doc.scores.len() != doc.models.len() {
        return Err(Error::Parse(format!(
            "{} models but {} score rows",
            doc.models.len(),
            doc.scores.len()
        )));
    }
    let mut rows = Vec::with_capacity(doc.scores.len());
    for (model, raw_row) in doc.models.iter().zip(&doc.scores) {
        if raw_row.len() != doc.categories.len() {
            return Err(Error::RaggedRow {
                model: model.clone(),
                expected: doc.categories.len(),
                found: raw_row.len(),
            });
        }
        let row = raw_row
            .iter()
            .zip(&doc.categories)
            .map(|(cell, cat)| match cell {
                serde_json::Value::Number(n) => n
                    .as_f64()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonFiniteScore {
                        model: model.clone(),
                        category: cat.clone(),
                    }),
                serde_json::Value::String(s) => parse_cell(s, model, cat),
                other => Err(Error::NonNumericScore {
                    model: model.clone(),
                    category: cat.clone(),
                    value: other.to_string(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    ScoreMatrix::new(doc.models, doc.categories, rows)
}

/// Pearson correlation coefficient, `None` when either vector is constant.
///
/// Uses the two-pass formulation (means first, then centered moments).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson: length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson: need at least 2 observations".into(),
        ));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(Some(r.clamp(-1.0, 1.0)))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Symmetric category x category Pearson matrix; `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    category_ids: Vec<String>,
    values: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    /// Builds a matrix from explicit cells, checking symmetry and range.
    pub fn from_cells(category_ids: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        check_unique(&category_ids, "category")?;
        let k = category_ids.len();
        if cells.len() != k || cells.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!(
                "correlation matrix must be {k}x{k}"
            )));
        }
        for i in 0..k {
            for j in 0..k {
                let (a, b) = (cells[i][j], cells[j][i]);
                if a != b {
                    return Err(Error::InvalidArgument(format!(
                        "correlation matrix not symmetric at ({i}, {j})"
                    )));
                }
                if let Some(v) = a {
                    if !(v.abs() <= 1.0 + RANGE_SLACK) {
                        return Err(Error::InvalidArgument(format!(
                            "correlation {v} at ({i}, {j}) outside [-1, 1]"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            category_ids,
            values: cells.into_iter().flatten().collect(),
        })
    }

    pub fn category_ids(&self) -> &[String] {
        &self.category_ids
    }

    pub fn len(&self) -> usize {
        self.category_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.category_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.category_ids.len() + j]
    }

    pub fn cells(&self) -> Vec<Vec<Option<f64>>> {
        let k = self.len();
        (0..k).map(|i| (0..k).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Unordered off-diagonal pairs `(i, j)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.len();
        (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j)))
    }
}

/// Pearson coefficient of every pair of category columns, taken across models.
pub fn category_correlations(m: &ScoreMatrix) -> Result<CorrelationMatrix> {
    if m.n_models() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlations need at least 2 models, found {}",
            m.n_models()
        )));
    }
    let k = m.n_categories();
    let columns: Vec<Vec<f64>> = (0..k).map(|c| m.column(c)).collect();
    let mut values = vec![None; k * k];
    for i in 0..k {
        if !is_constant(&columns[i]) {
            values[i * k + i] = Some(1.0);
        }
        for j in i + 1..k {
            let r = pearson(&columns[i], &columns[j])?;
            values[i * k + j] = r;
            values[j * k + i] = r;
        }
    }
    Ok(CorrelationMatrix {
        category_ids: m.category_ids().to_vec(),
        values,
    })
}

/// Categories having at least one *other* category with `|rho| < tau`.
///
/// Undefined cells never qualify a pair. Output follows the matrix order.
pub fn low_correlation_categories(c: &CorrelationMatrix, tau: f64) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
    }
    let k = c.len();
    let set = (0..k)
        .filter(|&i| {
            (0..k).any(|j| j != i && matches!(c.get(i, j), Some(r) if r.abs() < tau))
        })
        .map(|i| c.category_ids[i].clone())
        .collect();
    Ok(set)
}

/// Mean of the defined off-diagonal cells, each unordered pair counted once.
pub fn mean_offdiagonal(c: &CorrelationMatrix) -> Result<f64> {
    let defined: Vec<f64> = c.pairs().filter_map(|(i, j)| c.get(i, j)).collect();
    if defined.is_empty() {
        return Err(Error::NoDefinedCorrelations);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Serialized form of a correlation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub categories: Vec<String>,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub mean_offdiagonal: Option<f64>,
    pub low_correlation_set: Vec<String>,
    pub tau: f64,
}

impl CorrelationReport {
    pub fn build(c: &CorrelationMatrix, tau: f64) -> Result<Self> {
        let low_correlation_set = low_correlation_categories(c, tau)?;
        let mean = match mean_offdiagonal(c) {
            Ok(v) => Some(v),
            Err(Error::NoDefinedCorrelations) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            categories: c.category_ids().to_vec(),
            matrix: c.cells(),
            mean_offdiagonal: mean,
            low_correlation_set,
            tau,
        })
    }
}
