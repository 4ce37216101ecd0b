//! End-to-end run: correlations, expert selection, weight search, souping.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{macro_average, CategoryScores, RecipeEvaluator};
use crate::scorestore::{
    category_correlations, CorrelationReport, ScoreMatrix, DEFAULT_TAU,
};
use crate::selection::{select_experts, ExpertAssignment};
use crate::weightgrid::{optimize_weights, GridSpec, Recipe, SearchResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tau: f64,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Two or more experts; weights came from the lattice search.
    Searched,
    /// One distinct expert; it is the soup with weight 1.
    SingleExpert,
    /// No weakly-correlated categories; best macro-average model with weight 1.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInputs {
    pub tau: f64,
    pub grid: GridSpec,
    pub models: Vec<String>,
    pub categories: Vec<String>,
    pub evaluator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<IndexMap<String, PathBuf>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub recipes_evaluated: usize,
    pub underlying_evaluations: usize,
    /// Wall time; kept out of the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Everything a run produced, intermediates included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoceRun {
    pub inputs: RunInputs,
    pub correlations: CorrelationReport,
    pub low_correlation_set: Vec<String>,
    pub assignment: Option<ExpertAssignment>,
    pub search: Option<SearchResult>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
    pub recipe: Recipe,
    pub final_scores: CategoryScores,
    pub final_macro: f64,
    pub output_checkpoint: Option<PathBuf>,
    pub telemetry: Telemetry,
}

fn check_inputs(scores: &ScoreMatrix, evaluator: &dyn RecipeEvaluator) -> Result<()> {
    for m in scores.model_ids() {
        if !evaluator.has_model(m) {
            return Err(Error::Unknown {
                kind: "model (no checkpoint)",
                id: m.clone(),
            });
        }
    }
    Ok(())
}

/// Index of the row with the highest macro-average; first row wins ties.
fn best_macro_model(scores: &ScoreMatrix) -> usize {
    let mut best = 0;
    for j in 1..scores.n_models() {
        if scores.macro_average(j) > scores.macro_average(best) {
            best = j;
        }
    }
    best
}

/// Runs all four steps and, when `output` is given, writes the soup there.
pub fn run_soce(
    scores: &ScoreMatrix,
    evaluator: &dyn RecipeEvaluator,
    config: &RunConfig,
    output: Option<&Path>,
) -> Result<SoceRun> {
    let started = Instant::now();
    check_inputs(scores, evaluator)?;
    let before = evaluator.underlying_evaluations();

    let corr = category_correlations(scores)?;
    let correlations = CorrelationReport::build(&corr, config.tau)?;
    let low = correlations.low_correlation_set.clone();
    log::info!("{} of {} categories weakly correlated", low.len(), scores.n_categories());

    let mut assignment = None;
    let mut search = None;
    let mut notice = None;
    let (outcome, recipe, final_scores, recipes_evaluated) = if low.is_empty() {
        let best = &scores.model_ids()[best_macro_model(scores)];
        notice = Some(format!(
            "degenerate: no weakly-correlated categories at tau {}; using best macro-average model {best}",
            config.tau
        ));
        log::warn!("{}", notice.as_deref().unwrap());
        let recipe = Recipe::single(best);
        let s = evaluate_recipe(evaluator, &recipe)?;
        (Outcome::Degenerate, recipe, s, 1)
    } else {
        let a = select_experts(scores, &low)?;
        let result = if let [only] = a.experts.as_slice() {
            let recipe = Recipe::single(only);
            let s = evaluate_recipe(evaluator, &recipe)?;
            (Outcome::SingleExpert, recipe, s, 1)
        } else {
            let r = optimize_weights(&a.experts, evaluator, &config.grid)?;
            let best = r
                .evaluated
                .iter()
                .find(|e| e.recipe == r.best)
                .expect("best recipe was evaluated")
                .scores
                .clone();
            let out = (Outcome::Searched, r.best.clone(), best, r.evaluation_count);
            search = Some(r);
            out
        };
        assignment = Some(a);
        result
    };
    let final_macro = macro_average(&final_scores)?;

    if let Some(path) = output {
        evaluator.materialize(&recipe, path)?;
    }

    Ok(SoceRun {
        inputs: RunInputs {
            tau: config.tau,
            grid: config.grid,
            models: scores.model_ids().to_vec(),
            categories: scores.category_ids().to_vec(),
            evaluator: evaluator.describe(),
            checkpoints: None,
        },
        correlations,
        low_correlation_set: low,
        assignment,
        search,
        outcome,
        notice,
        recipe,
        final_scores,
        final_macro,
        output_checkpoint: output.map(Path::to_path_buf),
        telemetry: Telemetry {
            recipes_evaluated,
            underlying_evaluations: evaluator.underlying_evaluations() - before,
            elapsed: started.elapsed(),
        },
    })
}

fn evaluate_recipe(evaluator: &dyn RecipeEvaluator, recipe: &Recipe) -> Result<CategoryScores> {
    evaluator
        .evaluate(recipe)
        .map_err(|e| Error::RecipeEvaluation {
            recipe: recipe.to_string(),
            source: Box::new(e),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineArm {
    pub recipe: Recipe,
    pub scores: CategoryScores,
    pub macro_score: f64,
}

impl BaselineArm {
    fn evaluate(evaluator: &dyn RecipeEvaluator, recipe: Recipe) -> Result<Self> {
        let scores = evaluate_recipe(evaluator, &recipe)?;
        let macro_score = macro_average(&scores)?;
        Ok(Self {
            recipe,
            scores,
            macro_score,
        })
    }
}

/// Uniform soup of all candidates, uniform soup of the selected experts, and
/// the full search, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub uniform_all: BaselineArm,
    pub uniform_selected: BaselineArm,
    pub soce: BaselineArm,
    pub soce_outcome: Outcome,
}

impl BaselineReport {
    pub fn render_table(&self) -> String {
        let rows = [
            ("uniform (all candidates)", &self.uniform_all),
            ("uniform (selected experts)", &self.uniform_selected),
            ("soce", &self.soce),
        ];
        let mut out = format!("{:<28}  {:>10}  recipe\n", "arm", "macro");
        for (name, arm) in rows {
            out.push_str(&format!("{name:<28}  {:>10.4}  {}\n", arm.macro_score, arm.recipe));
        }
        out
    }
}

pub fn run_uniform_baselines(
    scores: &ScoreMatrix,
    evaluator: &dyn RecipeEvaluator,
    config: &RunConfig,
) -> Result<BaselineReport> {
    let run = run_soce(scores, evaluator, config, None)?;
    let uniform_all = BaselineArm::evaluate(evaluator, Recipe::uniform(scores.model_ids())?)?;
    let selected = match &run.assignment {
        Some(a) => Recipe::uniform(&a.experts)?,
        None => run.recipe.clone(),
    };
    let uniform_selected = BaselineArm::evaluate(evaluator, selected)?;
    Ok(BaselineReport {
        uniform_all,
        uniform_selected,
        soce: BaselineArm {
            recipe: run.recipe,
            macro_score: run.final_macro,
            scores: run.final_scores,
        },
        soce_outcome: run.outcome,
    })
}
