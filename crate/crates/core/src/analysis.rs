//! Post-hoc comparisons of a soup against its ingredients: task-level win
//! rates, the shift in category correlation, and per-category gains.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::CategoryScores;
use crate::scorestore::{category_correlations, ScoreMatrix};

/// Per-task pass/fail for a set of models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OutcomesJson", into = "OutcomesJson")]
pub struct TaskOutcomes {
    task_ids: Vec<String>,
    per_model: IndexMap<String, Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct OutcomesJson {
    tasks: Vec<String>,
    results: IndexMap<String, Vec<bool>>,
}

impl TryFrom<OutcomesJson> for TaskOutcomes {
    type Error = Error;

    fn try_from(j: OutcomesJson) -> Result<Self> {
        TaskOutcomes::new(j.tasks, j.results)
    }
}

impl From<TaskOutcomes> for OutcomesJson {
    fn from(t: TaskOutcomes) -> Self {
        OutcomesJson {
            tasks: t.task_ids,
            results: t.per_model,
        }
    }
}

impl TaskOutcomes {
    pub fn new(task_ids: Vec<String>, per_model: IndexMap<String, Vec<bool>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &task_ids {
            if !seen.insert(t.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "task",
                    id: t.clone(),
                });
            }
        }
        for (model, v) in &per_model {
            if v.len() != task_ids.len() {
                return Err(Error::InvalidArgument(format!(
                    "model {model:?} has {} outcomes for {} tasks",
                    v.len(),
                    task_ids.len()
                )));
            }
        }
        Ok(Self {
            task_ids,
            per_model,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("task outcomes {}: {e}", path.display())))
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &String> {
        self.per_model.keys()
    }

    pub fn solved(&self, model: &str) -> Result<&[bool]> {
        self.per_model
            .get(model)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Unknown {
                kind: "model",
                id: model.to_string(),
            })
    }

    fn candidates(&self, ids: &[String]) -> Result<Vec<&[bool]>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("no candidate models given".into()));
        }
        ids.iter().map(|id| self.solved(id)).collect()
    }
}

/// Share of the candidate's solved tasks that the soup also solves.
pub fn retention_rate(outcomes: &TaskOutcomes, soup_id: &str, candidate_id: &str) -> Result<f64> {
    let soup = outcomes.solved(soup_id)?;
    let cand = outcomes.solved(candidate_id)?;
    let solved = cand.iter().filter(|&&c| c).count();
    if solved == 0 {
        return Err(Error::EmptyUniverse(format!(
            "candidate {candidate_id:?} solves no tasks"
        )));
    }
    let kept = cand.iter().zip(soup).filter(|(&c, &s)| c && s).count();
    Ok(kept as f64 / solved as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCount {
    pub rate: f64,
    pub solved: usize,
    pub universe: usize,
}

fn rate_over(soup: &[bool], universe: impl Iterator<Item = usize>, what: &str) -> Result<RateCount> {
    let (mut solved, mut total) = (0, 0);
    for t in universe {
        total += 1;
        solved += soup[t] as usize;
    }
    if total == 0 {
        return Err(Error::EmptyUniverse(what.to_string()));
    }
    Ok(RateCount {
        rate: solved as f64 / total as f64,
        solved,
        universe: total,
    })
}

/// Over tasks every candidate fails: the share the soup solves.
pub fn new_solve_rate(outcomes: &TaskOutcomes, soup_id: &str, candidate_ids: &[String]) -> Result<RateCount> {
    let soup = outcomes.solved(soup_id)?;
    let cands = outcomes.candidates(candidate_ids)?;
    let universe = (0..soup.len()).filter(|&t| cands.iter().all(|c| !c[t]));
    rate_over(soup, universe, "no task is failed by every candidate")
}

/// Over tasks where exactly one candidate fails: the share the soup solves.
pub fn single_failure_completion(
    outcomes: &TaskOutcomes,
    soup_id: &str,
    candidate_ids: &[String],
) -> Result<RateCount> {
    let soup = outcomes.solved(soup_id)?;
    let cands = outcomes.candidates(candidate_ids)?;
    let universe = (0..soup.len()).filter(|&t| cands.iter().filter(|c| !c[t]).count() == 1);
    rate_over(soup, universe, "no task is failed by exactly one candidate")
}

/// All three win-rate views of one outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub soup: String,
    pub candidates: Vec<String>,
    pub task_count: usize,
    pub retention: IndexMap<String, Option<f64>>,
    pub new_solve: Option<RateCount>,
    pub single_failure_completion: Option<RateCount>,
}

impl WinRateReport {
    /// Undefined ratios (empty universes) are reported as null.
    pub fn build(outcomes: &TaskOutcomes, soup_id: &str, candidate_ids: &[String]) -> Result<Self> {
        outcomes.solved(soup_id)?;
        outcomes.candidates(candidate_ids)?;
        let defined = |r: Result<RateCount>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyUniverse(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let retention = candidate_ids
            .iter()
            .map(|c| match retention_rate(outcomes, soup_id, c) {
                Ok(v) => Ok((c.clone(), Some(v))),
                Err(Error::EmptyUniverse(_)) => Ok((c.clone(), None)),
                Err(e) => Err(e),
            })
            .collect::<Result<IndexMap<_, _>>>()?;
        Ok(Self {
            soup: soup_id.to_string(),
            candidates: candidate_ids.to_vec(),
            task_count: outcomes.task_ids().len(),
            retention,
            new_solve: defined(new_solve_rate(outcomes, soup_id, candidate_ids))?,
            single_failure_completion: defined(single_failure_completion(
                outcomes,
                soup_id,
                candidate_ids,
            ))?,
        })
    }

    pub fn render_table(&self) -> String {
        let fmt_rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        let fmt_count = |r: &Option<RateCount>| {
            r.map_or("n/a".to_string(), |c| {
                format!("{:.1}% ({}/{})", c.rate * 100.0, c.solved, c.universe)
            })
        };
        let mut rows: Vec<(String, String)> = self
            .retention
            .iter()
            .map(|(c, r)| (format!("retention vs {c}"), fmt_rate(*r)))
            .collect();
        rows.push(("new solves (all candidates fail)".into(), fmt_count(&self.new_solve)));
        rows.push((
            "completion (exactly one fails)".into(),
            fmt_count(&self.single_failure_completion),
        ));
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairShift {
    pub first: String,
    pub second: String,
    pub pre: Option<f64>,
    pub post: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationShiftReport {
    pub pre_mean: f64,
    pub post_mean: f64,
    pub delta: f64,
    /// Pairs defined in both populations, the ones the means range over.
    pub compared_pairs: usize,
    pub per_pair: Vec<PairShift>,
}

/// Mean off-diagonal Pearson before and after souping, over the pairs defined
/// in both populations. `post` may list categories in any order.
pub fn correlation_shift(pre: &ScoreMatrix, post: &ScoreMatrix) -> Result<CorrelationShiftReport> {
    let mut a = pre.category_ids().to_vec();
    let mut b = post.category_ids().to_vec();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::InvalidArgument(
            "pre and post score tables cover different categories".into(),
        ));
    }
    let pre_c = category_correlations(pre)?;
    let post_c = category_correlations(post)?;
    let remap: Vec<usize> = pre
        .category_ids()
        .iter()
        .map(|c| post.category_index(c).expect("same category set"))
        .collect();

    let mut per_pair = Vec::new();
    let (mut pre_sum, mut post_sum, mut n) = (0.0, 0.0, 0usize);
    for (i, j) in pre_c.pairs() {
        let before = pre_c.get(i, j);
        let after = post_c.get(remap[i], remap[j]);
        if let (Some(x), Some(y)) = (before, after) {
            pre_sum += x;
            post_sum += y;
            n += 1;
        }
        per_pair.push(PairShift {
            first: pre.category_ids()[i].clone(),
            second: pre.category_ids()[j].clone(),
            pre: before,
            post: after,
        });
    }
    if n == 0 {
        return Err(Error::NoDefinedCorrelations);
    }
    let pre_mean = pre_sum / n as f64;
    let post_mean = post_sum / n as f64;
    Ok(CorrelationShiftReport {
        pre_mean,
        post_mean,
        delta: post_mean - pre_mean,
        compared_pairs: n,
        per_pair,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryGains {
    pub improved: usize,
    pub regressed: usize,
    pub unchanged: usize,
    pub mean_delta: f64,
}

/// Per-category comparison of soup against candidate (`soup - candidate`).
pub fn category_gains(soup: &CategoryScores, candidate: &CategoryScores) -> Result<CategoryGains> {
    if soup.len() != candidate.len() || soup.scores.keys().any(|k| candidate.get(k).is_none()) {
        return Err(Error::InvalidArgument(
            "soup and candidate scores cover different categories".into(),
        ));
    }
    if soup.is_empty() {
        return Err(Error::InvalidArgument("no categories to compare".into()));
    }
    let mut g = CategoryGains {
        improved: 0,
        regressed: 0,
        unchanged: 0,
        mean_delta: 0.0,
    };
    let mut total = 0.0;
    for (k, s) in &soup.scores {
        let d = s - candidate.get(k).unwrap();
        total += d;
        match d.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => g.improved += 1,
            Some(std::cmp::Ordering::Less) => g.regressed += 1,
            _ => g.unchanged += 1,
        }
    }
    g.mean_delta = total / soup.len() as f64;
    Ok(g)
}
