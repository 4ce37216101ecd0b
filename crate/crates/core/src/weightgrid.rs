//! Soup recipes, the rational weight lattice over the simplex, and the
//! exhaustive search over it.
//!
//! Weights are exact fractions (`Ratio<u64>`). Grid points are compositions of
//! `1/step` units, so every vector sums to exactly one and the equal-weights
//! case can be deduplicated without float comparisons.

use std::collections::HashSet;
use std::fmt;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{macro_average, CategoryScores, RecipeEvaluator};

pub type Weight = Ratio<u64>;
pub type WeightVector = Vec<Weight>;

/// Parses `"0.1"`, `"1/10"` or `"1"` into an exact fraction.
pub fn parse_weight(s: &str) -> Result<Weight> {
    let s = s.trim();
    let bad = || Error::InvalidArgument(format!("cannot parse weight {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if (int.is_empty() && frac.is_empty()) || frac.len() > 18 {
        return Err(bad());
    }
    let digits = |t: &str| t.is_empty() || t.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return Err(bad());
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let den = 10u64.pow(frac.len() as u32);
    let num: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let whole = int.checked_mul(den).and_then(|w| w.checked_add(num)).ok_or_else(bad)?;
    Ok(Ratio::new(whole, den))
}

pub fn weight_to_f64(w: &Weight) -> f64 {
    *w.numer() as f64 / *w.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RecipeEntry {
    pub model: String,
    pub weight: Weight,
}

/// Ordered `(model, weight)` list; weights positive and summing to exactly one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RecipeJson", into = "RecipeJson")]
pub struct Recipe {
    entries: Vec<RecipeEntry>,
}

impl Recipe {
    pub fn new(entries: Vec<RecipeEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("recipe has no entries".into()));
        }
        let mut seen = HashSet::new();
        let mut total = Ratio::from_integer(0u64);
        for e in &entries {
            if !seen.insert(e.model.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "recipe model",
                    id: e.model.clone(),
                });
            }
            if *e.weight.numer() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "recipe weight for {:?} must be positive",
                    e.model
                )));
            }
            total += e.weight;
        }
        if total != Ratio::from_integer(1) {
            return Err(Error::InvalidArgument(format!(
                "recipe weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_weights(models: &[String], weights: &[Weight]) -> Result<Self> {
        if models.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} models but {} weights",
                models.len(),
                weights.len()
            )));
        }
        Self::new(
            models
                .iter()
                .zip(weights)
                .map(|(m, w)| RecipeEntry {
                    model: m.clone(),
                    weight: *w,
                })
                .collect(),
        )
    }

    /// Equal weights `1/n` over `models`.
    pub fn uniform(models: &[String]) -> Result<Self> {
        let w = Ratio::new(1, models.len().max(1) as u64);
        Self::from_weights(models, &vec![w; models.len()])
    }

    pub fn single(model: &str) -> Self {
        Self {
            entries: vec![RecipeEntry {
                model: model.to_string(),
                weight: Ratio::from_integer(1),
            }],
        }
    }

    pub fn entries(&self) -> &[RecipeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn models(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.model.clone()).collect()
    }

    pub fn weights(&self) -> WeightVector {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn float_weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| weight_to_f64(&e.weight)).collect()
    }

    /// Order-independent identity: ids sorted, weights as reduced fractions.
    pub fn canonical_key(&self) -> String {
        let mut parts: Vec<(&str, &Weight)> =
            self.entries.iter().map(|e| (e.model.as_str(), &e.weight)).collect();
        parts.sort_by(|a, b| a.0.cmp(b.0));
        parts
            .iter()
            .map(|(m, w)| format!("{m}={}/{}", w.numer(), w.denom()))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", e.model, e.weight)?;
        }
        f.write_str("}")
    }
}

#[derive(Serialize, Deserialize)]
struct RecipeJson {
    entries: Vec<RecipeEntryJson>,
}

#[derive(Serialize, Deserialize)]
struct RecipeEntryJson {
    model: String,
    weight_numerator: u64,
    weight_denominator: u64,
}

impl TryFrom<RecipeJson> for Recipe {
    type Error = Error;

    fn try_from(j: RecipeJson) -> Result<Self> {
        let entries = j
            .entries
            .into_iter()
            .map(|e| {
                if e.weight_denominator == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "zero weight denominator for {:?}",
                        e.model
                    )));
                }
                Ok(RecipeEntry {
                    model: e.model,
                    weight: Ratio::new(e.weight_numerator, e.weight_denominator),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Recipe::new(entries)
    }
}

impl From<Recipe> for RecipeJson {
    fn from(r: Recipe) -> Self {
        RecipeJson {
            entries: r
                .entries
                .into_iter()
                .map(|e| RecipeEntryJson {
                    model: e.model,
                    weight_numerator: *e.weight.numer(),
                    weight_denominator: *e.weight.denom(),
                })
                .collect(),
        }
    }
}

/// Lattice parameters: every weight is a multiple of `step` in `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(with = "ratio_str")]
    pub step: Weight,
    #[serde(with = "ratio_str")]
    pub min: Weight,
    #[serde(with = "ratio_str")]
    pub max: Weight,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            step: Ratio::new(1, 10),
            min: Ratio::new(1, 10),
            max: Ratio::new(9, 10),
        }
    }
}

mod ratio_str {
    use super::{parse_weight, Weight};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &Weight, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&w.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Weight, D::Error> {
        let s = String::deserialize(d)?;
        parse_weight(&s).map_err(serde::de::Error::custom)
    }
}

impl GridSpec {
    /// Lattice expressed in integer units of `step`: `(total, min, max)`.
    fn units(&self) -> Result<(u64, u64, u64)> {
        let one = Ratio::from_integer(1u64);
        if *self.step.numer() == 0 {
            return Err(Error::InfeasibleGrid("step must be positive".into()));
        }
        let total = one / self.step;
        if !total.is_integer() {
            return Err(Error::InfeasibleGrid(format!(
                "step {} does not divide 1",
                self.step
            )));
        }
        let lo = self.min / self.step;
        let hi = self.max / self.step;
        if !lo.is_integer() || !hi.is_integer() {
            return Err(Error::InfeasibleGrid(format!(
                "bounds [{}, {}] are not multiples of step {}",
                self.min, self.max, self.step
            )));
        }
        if self.min < self.step {
            return Err(Error::InfeasibleGrid(format!(
                "min weight {} below step {}",
                self.min, self.step
            )));
        }
        if self.min > self.max || self.max > one {
            return Err(Error::InfeasibleGrid(format!(
                "bounds [{}, {}] not ordered within (0, 1]",
                self.min, self.max
            )));
        }
        Ok((total.to_integer(), lo.to_integer(), hi.to_integer()))
    }
}

/// All weight vectors of length `l` on the lattice, in lexicographic order.
pub fn generate_grid(l: usize, spec: &GridSpec) -> Result<Vec<WeightVector>> {
    if l < 2 {
        return Err(Error::InfeasibleGrid(format!(
            "need at least 2 candidates, got {l}"
        )));
    }
    let (total, lo, hi) = spec.units()?;
    let l64 = l as u64;
    if l64 * lo > total || l64 * hi < total {
        return Err(Error::InfeasibleGrid(format!(
            "{l} weights in [{}, {}] cannot sum to 1",
            spec.min, spec.max
        )));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(l);
    compositions(total, l, lo, hi, &mut current, &mut out);
    Ok(out
        .into_iter()
        .map(|units| units.into_iter().map(|u| Ratio::new(u, total)).collect())
        .collect())
}

fn compositions(
    remaining: u64,
    parts: usize,
    lo: u64,
    hi: u64,
    current: &mut Vec<u64>,
    out: &mut Vec<Vec<u64>>,
) {
    if parts == 1 {
        if (lo..=hi).contains(&remaining) {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
        }
        return;
    }
    let rest = (parts - 1) as u64;
    for u in lo..=hi {
        if u > remaining {
            break;
        }
        let left = remaining - u;
        if left < rest * lo || left > rest * hi {
            continue;
        }
        current.push(u);
        compositions(left, parts - 1, lo, hi, current, out);
        current.pop();
    }
}

/// Appends the uniform vector `(1/l, ..., 1/l)` unless the grid already holds it.
pub fn with_equal_case(mut grid: Vec<WeightVector>, l: usize) -> Vec<WeightVector> {
    if l == 0 {
        return grid;
    }
    let uniform = vec![Ratio::new(1, l as u64); l];
    if !grid.contains(&uniform) {
        grid.push(uniform);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub recipe: Recipe,
    pub scores: CategoryScores,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Recipe,
    pub best_objective: f64,
    pub evaluated: Vec<Evaluation>,
    pub evaluation_count: usize,
}

/// Evaluates every lattice recipe (plus the equal case) and keeps the best.
///
/// The objective is the macro-average over all evaluator categories. Ties go to
/// the earliest vector in enumeration order, independent of evaluation order.
pub fn optimize_weights(
    experts: &[String],
    evaluator: &dyn RecipeEvaluator,
    spec: &GridSpec,
) -> Result<SearchResult> {
    let l = experts.len();
    let grid = with_equal_case(generate_grid(l, spec)?, l);
    let recipes = grid
        .iter()
        .map(|w| Recipe::from_weights(experts, w))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Result<Evaluation>> = recipes
        .into_par_iter()
        .map(|recipe| {
            let scores = evaluator
                .evaluate(&recipe)
                .and_then(|s| macro_average(&s).map(|m| (s, m)));
            match scores {
                Ok((scores, objective)) => Ok(Evaluation {
                    recipe,
                    scores,
                    objective,
                }),
                Err(e) => Err(Error::RecipeEvaluation {
                    recipe: recipe.to_string(),
                    source: Box::new(e),
                }),
            }
        })
        .collect();
    let evaluated = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, e) in evaluated.iter().enumerate().skip(1) {
        if e.objective > evaluated[best].objective {
            best = i;
        }
    }
    log::debug!(
        "weight search over {} recipes, best {} = {}",
        evaluated.len(),
        evaluated[best].recipe,
        evaluated[best].objective
    );
    Ok(SearchResult {
        best: evaluated[best].recipe.clone(),
        best_objective: evaluated[best].objective,
        evaluation_count: evaluated.len(),
        evaluated,
    })
}
