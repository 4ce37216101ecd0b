//! Per-category expert selection.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorestore::ScoreMatrix;

/// Best model for each low-correlation category, plus the distinct experts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertAssignment {
    pub per_category: IndexMap<String, String>,
    /// Distinct expert ids in first-appearance order over the category set.
    pub experts: Vec<String>,
}

/// Picks the argmax model of every category in `categories`.
///
/// Ties go to the model listed first in the score matrix.
pub fn select_experts(m: &ScoreMatrix, categories: &[String]) -> Result<ExpertAssignment> {
    if categories.is_empty() {
        return Err(Error::EmptyLowCorrelationSet);
    }
    if m.n_models() == 0 {
        return Err(Error::InvalidArgument("score matrix has no models".into()));
    }
    let mut per_category = IndexMap::with_capacity(categories.len());
    let mut experts: Vec<String> = Vec::new();
    for cat in categories {
        let c = m.category_index(cat).ok_or_else(|| Error::Unknown {
            kind: "category",
            id: cat.clone(),
        })?;
        let mut best = 0;
        for j in 1..m.n_models() {
            if m.get(j, c) > m.get(best, c) {
                best = j;
            }
        }
        let id = m.model_ids()[best].clone();
        if !experts.contains(&id) {
            experts.push(id.clone());
        }
        per_category.insert(cat.clone(), id);
    }
    Ok(ExpertAssignment {
        per_category,
        experts,
    })
}

/// Serialized assignment, including the category set it was computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub low_correlation_set: Vec<String>,
    pub per_category: IndexMap<String, String>,
    pub experts: Vec<String>,
}

impl AssignmentReport {
    pub fn new(low_correlation_set: Vec<String>, a: &ExpertAssignment) -> Self {
        Self {
            low_correlation_set,
            per_category: a.per_category.clone(),
            experts: a.experts.clone(),
        }
    }
}
