//! Mapping recipes to per-category scores.
//!
//! Every evaluator implements [`RecipeEvaluator`]. Three are provided:
//!
//! * [`SyntheticEvaluator`]: models are parameter vectors, the soup is their
//!   weighted sum, and each category scores a Gaussian bump around a target.
//!   Everything about it is analytic, which makes it the desk-scale fixture.
//! * [`CheckpointEvaluator`]: models are checkpoint files; the soup is
//!   materialized to a temporary file and scored by an external command
//!   speaking the subprocess protocol (see [`evaluate_subprocess`]).
//! * [`CachedEvaluator`]: wraps either and memoizes by canonical recipe key.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorestore::ScoreMatrix;
use crate::soup::{self, DType, Tensor, TensorMap};
use crate::weightgrid::Recipe;

/// Metadata key under which a materialized soup records its recipe JSON.
pub const RECIPE_METADATA_KEY: &str = "soup.recipe";

/// Ordered category id -> score map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryScores {
    pub scores: IndexMap<String, f64>,
}

impl CategoryScores {
    pub fn new(scores: IndexMap<String, f64>) -> Self {
        Self { scores }
    }

    pub fn get(&self, category: &str) -> Option<f64> {
        self.scores.get(category).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl FromIterator<(String, f64)> for CategoryScores {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Self {
            scores: iter.into_iter().collect(),
        }
    }
}

/// Arithmetic mean of all category scores.
pub fn macro_average(s: &CategoryScores) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("macro average of no categories".into()));
    }
    Ok(s.scores.values().sum::<f64>() / s.len() as f64)
}

/// Anything that can score a soup recipe.
pub trait RecipeEvaluator: Send + Sync {
    /// Categories every result covers, in output order.
    fn categories(&self) -> &[String];

    fn has_model(&self, id: &str) -> bool;

    fn evaluate(&self, recipe: &Recipe) -> Result<CategoryScores>;

    /// Writes the souped checkpoint for `recipe` to `path`.
    fn materialize(&self, recipe: &Recipe, path: &Path) -> Result<()>;

    /// Number of evaluations that actually ran (cache misses for cached evaluators).
    fn underlying_evaluations(&self) -> usize;

    fn describe(&self) -> String;
}

fn check_models(evaluator: &dyn RecipeEvaluator, recipe: &Recipe) -> Result<()> {
    for e in recipe.entries() {
        if !evaluator.has_model(&e.model) {
            return Err(Error::Unknown {
                kind: "model",
                id: e.model.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCategory {
    pub id: String,
    pub target: Vec<f64>,
    pub width: f64,
}

fn default_scale() -> f64 {
    100.0
}

/// Isotropic Gaussian score bumps, one per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLandscape {
    pub dimension: usize,
    pub categories: Vec<SyntheticCategory>,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl SyntheticLandscape {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::InvalidArgument("landscape has no categories".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale {} must be positive", self.scale)));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.categories {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "category",
                    id: c.id.clone(),
                });
            }
            if c.target.len() != self.dimension {
                return Err(Error::InvalidArgument(format!(
                    "target of {:?} has length {}, expected {}",
                    c.id,
                    c.target.len(),
                    self.dimension
                )));
            }
            if !(c.width.is_finite() && c.width > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "width of {:?} must be positive",
                    c.id
                )));
            }
        }
        Ok(())
    }
}

/// `score_c = scale * exp(-|theta - mu_c|^2 / (2 sigma_c^2))`.
pub fn evaluate_synthetic(land: &SyntheticLandscape, theta: &[f64]) -> Result<CategoryScores> {
    if theta.len() != land.dimension {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has length {}, landscape dimension is {}",
            theta.len(),
            land.dimension
        )));
    }
    Ok(land
        .categories
        .iter()
        .map(|c| {
            let d2: f64 = theta
                .iter()
                .zip(&c.target)
                .map(|(t, m)| (t - m) * (t - m))
                .sum();
            (c.id.clone(), land.scale * (-d2 / (2.0 * c.width * c.width)).exp())
        })
        .collect())
}

/// On-disk form of a synthetic evaluator: landscape plus model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub landscape: SyntheticLandscape,
    pub models: IndexMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    landscape: SyntheticLandscape,
    category_ids: Vec<String>,
    models: IndexMap<String, Vec<f64>>,
    evaluations: Arc<AtomicUsize>,
}

impl SyntheticEvaluator {
    pub fn new(landscape: SyntheticLandscape, models: IndexMap<String, Vec<f64>>) -> Result<Self> {
        landscape.validate()?;
        for (id, theta) in &models {
            if theta.len() != landscape.dimension {
                return Err(Error::InvalidArgument(format!(
                    "model {id:?} has {} parameters, landscape dimension is {}",
                    theta.len(),
                    landscape.dimension
                )));
            }
        }
        let category_ids = landscape.categories.iter().map(|c| c.id.clone()).collect();
        Ok(Self {
            landscape,
            category_ids,
            models,
            evaluations: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn from_config(config: SyntheticConfig) -> Result<Self> {
        Self::new(config.landscape, config.models)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let config: SyntheticConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("synthetic config {}: {e}", path.display())))?;
        Self::from_config(config)
    }

    pub fn landscape(&self) -> &SyntheticLandscape {
        &self.landscape
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    /// Weighted sum of the recipe's parameter vectors.
    pub fn souped_parameters(&self, recipe: &Recipe) -> Result<Vec<f64>> {
        check_models(self, recipe)?;
        let mut theta = vec![0.0; self.landscape.dimension];
        for (e, w) in recipe.entries().iter().zip(recipe.float_weights()) {
            for (t, p) in theta.iter_mut().zip(&self.models[&e.model]) {
                *t += w * p;
            }
        }
        Ok(theta)
    }

    /// Leaderboard of every model evaluated on its own.
    pub fn score_matrix(&self) -> Result<ScoreMatrix> {
        let rows = self
            .models
            .values()
            .map(|theta| {
                evaluate_synthetic(&self.landscape, theta)
                    .map(|s| s.scores.values().copied().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        ScoreMatrix::new(self.model_ids(), self.category_ids.clone(), rows)
    }
}

impl RecipeEvaluator for SyntheticEvaluator {
    fn categories(&self) -> &[String] {
        &self.category_ids
    }

    fn has_model(&self, id: &str) -> bool {
        self.models.contains_key(id)
    }

    fn evaluate(&self, recipe: &Recipe) -> Result<CategoryScores> {
        let theta = self.souped_parameters(recipe)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        evaluate_synthetic(&self.landscape, &theta)
    }

    fn materialize(&self, recipe: &Recipe, path: &Path) -> Result<()> {
        let theta = self.souped_parameters(recipe)?;
        let mut m = TensorMap::new();
        m.insert("theta", Tensor::from_f64(DType::F64, vec![theta.len()], &theta)?);
        m.metadata_mut().insert(
            RECIPE_METADATA_KEY.to_string(),
            serde_json::to_string(recipe).expect("recipe serializes"),
        );
        soup::save_checkpoint(&m, path)
    }

    fn underlying_evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!(
            "synthetic(dimension={}, categories={})",
            self.landscape.dimension,
            self.category_ids.len()
        )
    }
}

/// Splits a shell-style command template into program and arguments.
pub fn parse_command(template: &str) -> Result<Vec<String>> {
    let parts = shlex::split(template)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot parse command {template:?}")))?;
    if parts.is_empty() {
        return Err(Error::InvalidArgument("empty evaluator command".into()));
    }
    Ok(parts)
}

#[derive(Deserialize)]
struct ProtocolResponse {
    scores: serde_json::Map<String, serde_json::Value>,
}

/// Runs `<command> --checkpoint <path> --categories <a,b,...>` and parses the
/// single `{"scores": {...}}` object it prints.
pub fn evaluate_subprocess(
    command: &[String],
    checkpoint: &Path,
    categories: &[String],
) -> Result<CategoryScores> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty evaluator command".into()))?;
    log::debug!("running {program} on {}", checkpoint.display());
    let output = Command::new(program)
        .args(args)
        .arg("--checkpoint")
        .arg(checkpoint)
        .arg("--categories")
        .arg(categories.join(","))
        .output()
        .map_err(|e| Error::EvaluatorExit {
            status: format!("failed to start {program:?}"),
            stderr: e.to_string(),
        })?;
    if !output.status.success() {
        return Err(Error::EvaluatorExit {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let stdout = std::str::from_utf8(&output.stdout)
        .map_err(|_| Error::MalformedEvaluatorOutput("stdout is not UTF-8".into()))?;
    let response: ProtocolResponse = serde_json::from_str(stdout.trim())
        .map_err(|e| Error::MalformedEvaluatorOutput(e.to_string()))?;
    categories
        .iter()
        .map(|c| {
            let v = response
                .scores
                .get(c)
                .ok_or_else(|| Error::MissingCategory(c.clone()))?;
            let v = v.as_f64().ok_or_else(|| {
                Error::MalformedEvaluatorOutput(format!("score for {c:?} is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCategoryScore(c.clone()));
            }
            Ok((c.clone(), v))
        })
        .collect()
}

/// Checkpoint-file models scored by an external command.
pub struct CheckpointEvaluator {
    command: Vec<String>,
    category_ids: Vec<String>,
    checkpoints: IndexMap<String, PathBuf>,
    loaded: Mutex<HashMap<String, Arc<TensorMap>>>,
    scratch: tempfile::TempDir,
    evaluations: AtomicUsize,
}

impl CheckpointEvaluator {
    pub fn new(
        command: Vec<String>,
        category_ids: Vec<String>,
        checkpoints: IndexMap<String, PathBuf>,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::InvalidArgument("empty evaluator command".into()));
        }
        if category_ids.is_empty() {
            return Err(Error::InvalidArgument("evaluator needs at least one category".into()));
        }
        Ok(Self {
            command,
            category_ids,
            checkpoints,
            loaded: Mutex::new(HashMap::new()),
            scratch: tempfile::tempdir()?,
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn checkpoints(&self) -> &IndexMap<String, PathBuf> {
        &self.checkpoints
    }

    fn tensors(&self, id: &str) -> Result<Arc<TensorMap>> {
        if let Some(m) = self.loaded.lock().unwrap().get(id) {
            return Ok(Arc::clone(m));
        }
        let path = self.checkpoints.get(id).ok_or_else(|| Error::Unknown {
            kind: "model",
            id: id.to_string(),
        })?;
        let m = Arc::new(soup::load_checkpoint(path)?);
        self.loaded
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_insert_with(|| Arc::clone(&m));
        Ok(m)
    }

    fn souped(&self, recipe: &Recipe) -> Result<TensorMap> {
        let maps = recipe
            .entries()
            .iter()
            .map(|e| self.tensors(&e.model).map(|m| (*m).clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut out = soup::soup(&maps, &recipe.float_weights())?;
        out.metadata_mut().insert(
            RECIPE_METADATA_KEY.to_string(),
            serde_json::to_string(recipe).expect("recipe serializes"),
        );
        Ok(out)
    }
}

impl RecipeEvaluator for CheckpointEvaluator {
    fn categories(&self) -> &[String] {
        &self.category_ids
    }

    fn has_model(&self, id: &str) -> bool {
        self.checkpoints.contains_key(id)
    }

    fn evaluate(&self, recipe: &Recipe) -> Result<CategoryScores> {
        check_models(self, recipe)?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        if let [only] = recipe.entries() {
            return evaluate_subprocess(&self.command, &self.checkpoints[&only.model], &self.category_ids);
        }
        let n = self.evaluations.load(Ordering::Relaxed);
        let path = self
            .scratch
            .path()
            .join(format!("soup-{n}-{:016x}.safetensors", fnv1a(recipe.canonical_key().as_bytes())));
        soup::save_checkpoint(&self.souped(recipe)?, &path)?;
        let result = evaluate_subprocess(&self.command, &path, &self.category_ids);
        let _ = std::fs::remove_file(&path);
        result
    }

    fn materialize(&self, recipe: &Recipe, path: &Path) -> Result<()> {
        check_models(self, recipe)?;
        soup::save_checkpoint(&self.souped(recipe)?, path)
    }

    fn underlying_evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn describe(&self) -> String {
        format!("subprocess({})", self.command.join(" "))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

type Slot = Arc<Mutex<Option<CategoryScores>>>;

/// Memoizes an evaluator by [`Recipe::canonical_key`].
///
/// Each key owns a slot mutex held for the duration of its evaluation, so
/// concurrent requests for the same recipe wait instead of re-evaluating.
pub struct CachedEvaluator<E> {
    inner: E,
    slots: Mutex<HashMap<String, Slot>>,
    misses: AtomicUsize,
}

impl<E: RecipeEvaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            slots: Mutex::new(HashMap::new()),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache_misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<E: RecipeEvaluator> RecipeEvaluator for CachedEvaluator<E> {
    fn categories(&self) -> &[String] {
        self.inner.categories()
    }

    fn has_model(&self, id: &str) -> bool {
        self.inner.has_model(id)
    }

    fn evaluate(&self, recipe: &Recipe) -> Result<CategoryScores> {
        let slot = {
            let mut slots = self.slots.lock().unwrap();
            Arc::clone(slots.entry(recipe.canonical_key()).or_default())
        };
        let mut guard = slot.lock().unwrap();
        if let Some(hit) = guard.as_ref() {
            return Ok(hit.clone());
        }
        let scores = self.inner.evaluate(recipe)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        *guard = Some(scores.clone());
        Ok(scores)
    }

    fn materialize(&self, recipe: &Recipe, path: &Path) -> Result<()> {
        self.inner.materialize(recipe, path)
    }

    fn underlying_evaluations(&self) -> usize {
        self.cache_misses()
    }

    fn describe(&self) -> String {
        format!("cached({})", self.inner.describe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn fixture() -> SyntheticEvaluator {
        let landscape = SyntheticLandscape {
            dimension: 2,
            categories: vec![
                SyntheticCategory {
                    id: "A".into(),
                    target: vec![1.0, 0.0],
                    width: 1.0,
                },
                SyntheticCategory {
                    id: "B".into(),
                    target: vec![0.0, 1.0],
                    width: 1.0,
                },
            ],
            scale: 100.0,
        };
        let models = IndexMap::from([
            ("M1".to_string(), vec![1.0, 0.0]),
            ("M2".to_string(), vec![0.0, 1.0]),
        ]);
        SyntheticEvaluator::new(landscape, models).unwrap()
    }

    #[test]
    fn synthetic_scores() {
        let ev = fixture();
        let land = ev.landscape();
        let at_target = evaluate_synthetic(land, &[1.0, 0.0]).unwrap();
        assert_eq!(at_target.get("A"), Some(100.0));
        assert!((at_target.get("B").unwrap() - 100.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((at_target.get("B").unwrap() - 36.79).abs() < 5e-3);
        let mid = evaluate_synthetic(land, &[0.5, 0.5]).unwrap();
        for c in ["A", "B"] {
            assert!((mid.get(c).unwrap() - 100.0 * (-0.25f64).exp()).abs() < 1e-12);
        }
        assert!(evaluate_synthetic(land, &[1.0]).is_err());
    }

    #[test]
    fn recipes_on_synthetic() {
        let ev = fixture();
        let single = ev.evaluate(&Recipe::single("M1")).unwrap();
        assert_eq!(single, evaluate_synthetic(ev.landscape(), &[1.0, 0.0]).unwrap());
        let ids = ev.model_ids();
        let half = ev.evaluate(&Recipe::uniform(&ids).unwrap()).unwrap();
        assert!((half.get("A").unwrap() - 77.88).abs() < 5e-3);
        assert!(matches!(
            ev.evaluate(&Recipe::single("nope")),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn macro_average_examples() {
        let s: CategoryScores = [("A".to_string(), 100.0), ("B".to_string(), 36.79)]
            .into_iter()
            .collect();
        assert!((macro_average(&s).unwrap() - 68.395).abs() < 1e-9);
        let s: CategoryScores = [("A".to_string(), 42.0)].into_iter().collect();
        assert_eq!(macro_average(&s).unwrap(), 42.0);
        assert!(macro_average(&CategoryScores::default()).is_err());
    }

    #[test]
    fn cache_deduplicates_canonical_recipes() {
        let cached = CachedEvaluator::new(fixture());
        let ids = vec!["M1".to_string(), "M2".to_string()];
        let rev = vec!["M2".to_string(), "M1".to_string()];
        let w = [Ratio::new(3, 10), Ratio::new(7, 10)];
        let a = Recipe::from_weights(&ids, &w).unwrap();
        let b = Recipe::from_weights(&rev, &[w[1], w[0]]).unwrap();
        let first = cached.evaluate(&a).unwrap();
        let second = cached.evaluate(&a).unwrap();
        let third = cached.evaluate(&b).unwrap();
        assert_eq!(first, second);
        assert_eq!(first, third);
        assert_eq!(cached.cache_misses(), 1);
        assert_eq!(cached.inner().underlying_evaluations(), 1);
    }

    #[test]
    fn cache_is_safe_under_concurrency() {
        use rayon::prelude::*;
        let cached = CachedEvaluator::new(fixture());
        let r = Recipe::uniform(&["M1".to_string(), "M2".to_string()]).unwrap();
        let results: Vec<_> = (0..64)
            .into_par_iter()
            .map(|_| cached.evaluate(&r).unwrap())
            .collect();
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cached.inner().underlying_evaluations(), 1);
    }

    #[test]
    fn landscape_validation() {
        let mut land = fixture().landscape().clone();
        land.categories[0].width = 0.0;
        assert!(land.validate().is_err());
        let mut land = fixture().landscape().clone();
        land.categories[1].target = vec![1.0];
        assert!(land.validate().is_err());
        let land = fixture().landscape().clone();
        let models = IndexMap::from([("X".to_string(), vec![1.0])]);
        assert!(SyntheticEvaluator::new(land, models).is_err());
    }

    #[test]
    fn parse_commands() {
        assert_eq!(
            parse_command("python3 'my eval.py' --fast").unwrap(),
            vec!["python3", "my eval.py", "--fast"]
        );
        assert!(parse_command("").is_err());
        assert!(parse_command("'unterminated").is_err());
    }
}
