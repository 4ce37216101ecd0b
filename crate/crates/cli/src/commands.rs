use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::Serialize;
use soce_core::analysis::{correlation_shift, TaskOutcomes, WinRateReport};
use soce_core::evaluator::{parse_command, RECIPE_METADATA_KEY};
use soce_core::scorestore::{category_correlations, load_scores_path, CorrelationReport};
use soce_core::selection::{select_experts, AssignmentReport};
use soce_core::shapley::{shapley, souping_game, GameSpec, ShapleyMethod, MAX_PLAYERS_PERMUTATION};
use soce_core::soup::{check_compatible, load_checkpoint, save_checkpoint, soup};
use soce_core::weightgrid::optimize_weights;
use soce_core::{
    run_soce, run_uniform_baselines, CachedEvaluator, CheckpointEvaluator, Error, GridSpec, Recipe,
    RecipeEvaluator, Result, RunConfig, ScoreMatrix, SyntheticEvaluator,
};

use crate::{render, Cli, Command, Global, Method};

pub fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    if !(g.tau.is_finite() && g.tau > 0.0 && g.tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau {} must lie in (0, 1]", g.tau)));
    }

    match &cli.command {
        Command::Correlations { scores } => {
            let m = load_scores_path(scores)?;
            let report = CorrelationReport::build(&category_correlations(&m)?, g.tau)?;
            emit(g, &report, || render::correlations(&report))
        }
        Command::Select { scores } => {
            let m = load_scores_path(scores)?;
            let report = CorrelationReport::build(&category_correlations(&m)?, g.tau)?;
            let a = select_experts(&m, &report.low_correlation_set)?;
            let out = AssignmentReport::new(report.low_correlation_set, &a);
            emit(g, &out, || render::assignment(&out))
        }
        Command::Search { scores, models } => {
            let s = Setup::new(g, scores.as_deref())?;
            let experts = if models.is_empty() {
                let report = CorrelationReport::build(&category_correlations(&s.scores)?, g.tau)?;
                select_experts(&s.scores, &report.low_correlation_set)?.experts
            } else {
                models.clone()
            };
            let result = optimize_weights(&experts, s.evaluator.as_ref(), &grid(g))?;
            emit(g, &result, || render::search(&result))
        }
        Command::Soup { recipe } => cmd_soup(g, recipe),
        Command::Run { scores, soup_out } => {
            let s = Setup::new(g, scores.as_deref())?;
            let config = RunConfig {
                tau: g.tau,
                grid: grid(g),
            };
            let mut run = run_soce(&s.scores, s.evaluator.as_ref(), &config, soup_out.as_deref())?;
            run.inputs.checkpoints = s.checkpoints;
            if let Some(notice) = &run.notice {
                eprintln!("{notice}");
            }
            log::info!(
                "{} recipes evaluated in {:.3}s",
                run.telemetry.recipes_evaluated,
                run.telemetry.elapsed.as_secs_f64()
            );
            emit(g, &run, || render::run(&run))
        }
        Command::Shapley {
            game,
            players,
            method,
            categories,
        } => {
            let report = match game {
                Some(path) => {
                    let spec: GameSpec = read_json(path)?;
                    let game = spec.into_game()?;
                    shapley(&game, pick_method(*method, game.n()))?
                }
                None => {
                    let groups: Vec<Vec<String>> = players
                        .iter()
                        .map(|p| p.split('+').map(str::to_string).collect())
                        .collect();
                    let models: Vec<String> = groups.iter().flatten().cloned().collect();
                    let evaluator = player_evaluator(g, &models, categories)?;
                    let game = souping_game(groups, evaluator.as_ref())?;
                    shapley(&game, pick_method(*method, game.n()))?
                }
            };
            emit(g, &report, || report.render_table())
        }
        Command::Winrate {
            outcomes,
            soup,
            candidates,
        } => {
            let o = TaskOutcomes::load(outcomes)?;
            let report = WinRateReport::build(&o, soup, candidates)?;
            emit(g, &report, || report.render_table())
        }
        Command::CorrShift { pre, post } => {
            let report = correlation_shift(&load_scores_path(pre)?, &load_scores_path(post)?)?;
            emit(g, &report, || render::corr_shift(&report))
        }
        Command::Baselines { scores } => {
            let s = Setup::new(g, scores.as_deref())?;
            let config = RunConfig {
                tau: g.tau,
                grid: grid(g),
            };
            let report = run_uniform_baselines(&s.scores, s.evaluator.as_ref(), &config)?;
            emit(g, &report, || report.render_table())
        }
    }
}

fn grid(g: &Global) -> GridSpec {
    GridSpec {
        step: g.step,
        min: g.min_weight,
        max: g.max_weight,
    }
}

fn pick_method(m: Method, n: usize) -> ShapleyMethod {
    match m {
        Method::Permutation => ShapleyMethod::Permutation,
        Method::Subset => ShapleyMethod::Subset,
        Method::Auto if n <= MAX_PLAYERS_PERMUTATION => ShapleyMethod::Permutation,
        Method::Auto => ShapleyMethod::Subset,
    }
}

/// Score matrix plus the evaluator that scores recipes over its models.
struct Setup {
    scores: ScoreMatrix,
    evaluator: Box<dyn RecipeEvaluator>,
    checkpoints: Option<IndexMap<String, PathBuf>>,
}

impl Setup {
    fn new(g: &Global, scores: Option<&Path>) -> Result<Self> {
        if let Some(config) = &g.synthetic_config {
            let ev = SyntheticEvaluator::load(config)?;
            let scores = match scores {
                Some(p) => load_scores_path(p)?,
                None => ev.score_matrix()?,
            };
            return Ok(Self {
                scores,
                evaluator: Box::new(ev),
                checkpoints: None,
            });
        }
        let Some(cmd) = &g.evaluator_cmd else {
            return Err(Error::InvalidArgument(
                "an evaluator is required: pass --synthetic-config or --evaluator-cmd".into(),
            ));
        };
        let Some(path) = scores else {
            return Err(Error::InvalidArgument(
                "--scores is required with --evaluator-cmd".into(),
            ));
        };
        let scores = load_scores_path(path)?;
        let checkpoints = checkpoint_paths(g, scores.model_ids())?;
        let ev = CheckpointEvaluator::new(
            parse_command(cmd)?,
            scores.category_ids().to_vec(),
            checkpoints.clone(),
        )?;
        Ok(Self {
            scores,
            evaluator: Box::new(CachedEvaluator::new(ev)),
            checkpoints: Some(checkpoints),
        })
    }
}

fn player_evaluator(g: &Global, models: &[String], categories: &[String]) -> Result<Box<dyn RecipeEvaluator>> {
    if let Some(config) = &g.synthetic_config {
        return Ok(Box::new(SyntheticEvaluator::load(config)?));
    }
    let Some(cmd) = &g.evaluator_cmd else {
        return Err(Error::InvalidArgument(
            "--player needs an evaluator: pass --synthetic-config or --evaluator-cmd".into(),
        ));
    };
    if categories.is_empty() {
        return Err(Error::InvalidArgument(
            "--categories is required with --evaluator-cmd".into(),
        ));
    }
    let checkpoints = checkpoint_paths(g, models)?;
    let ev = CheckpointEvaluator::new(parse_command(cmd)?, categories.to_vec(), checkpoints)?;
    Ok(Box::new(CachedEvaluator::new(ev)))
}

/// `<checkpoint-dir>/<id>.safetensors` for every id; all must exist.
fn checkpoint_paths(g: &Global, models: &[String]) -> Result<IndexMap<String, PathBuf>> {
    let Some(dir) = &g.checkpoint_dir else {
        return Err(Error::InvalidArgument(
            "--checkpoint-dir is required for checkpoint models".into(),
        ));
    };
    let mut out = IndexMap::new();
    for id in models {
        let path = dir.join(format!("{id}.safetensors"));
        if !path.is_file() {
            return Err(Error::File {
                path,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
            });
        }
        out.insert(id.clone(), path);
    }
    Ok(out)
}

fn cmd_soup(g: &Global, recipe_path: &Path) -> Result<()> {
    let Some(out) = &g.out else {
        return Err(Error::InvalidArgument("soup needs --out for the checkpoint".into()));
    };
    let doc: serde_json::Value = read_json(recipe_path)?;
    let (recipe, recorded) = match doc.get("recipe") {
        Some(r) => {
            let recorded = match doc.pointer("/inputs/checkpoints") {
                Some(c) => Some(parse_value::<IndexMap<String, PathBuf>>(c.clone(), recipe_path)?),
                None => None,
            };
            (parse_value::<Recipe>(r.clone(), recipe_path)?, recorded)
        }
        None => (parse_value::<Recipe>(doc, recipe_path)?, None),
    };

    let models = recipe.models();
    let paths = if g.checkpoint_dir.is_some() {
        checkpoint_paths(g, &models)?
    } else if let Some(recorded) = recorded {
        recorded
    } else if let Some(config) = &g.synthetic_config {
        SyntheticEvaluator::load(config)?.materialize(&recipe, out)?;
        println!("{}", out.display());
        return Ok(());
    } else {
        return Err(Error::InvalidArgument(
            "soup needs --checkpoint-dir (or a run report that lists checkpoints)".into(),
        ));
    };

    let maps = models
        .iter()
        .map(|m| {
            let path = paths.get(m).ok_or_else(|| Error::Unknown {
                kind: "model (no checkpoint)",
                id: m.clone(),
            })?;
            load_checkpoint(path)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = check_compatible(&maps);
    if !report.compatible {
        return Err(Error::Incompatible(report));
    }
    let mut souped = soup(&maps, &recipe.float_weights())?;
    souped.metadata_mut().insert(
        RECIPE_METADATA_KEY.to_string(),
        serde_json::to_string(&recipe).expect("recipe serializes"),
    );
    save_checkpoint(&souped, out)?;
    println!("{}", out.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn parse_value<T: serde::de::DeserializeOwned>(v: serde_json::Value, path: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Writes the report (JSON, or a table with `--table`) to `--out` or stdout.
fn emit<T: Serialize>(g: &Global, value: &T, table: impl FnOnce() -> String) -> Result<()> {
    let text = if g.table {
        table()
    } else {
        let mut s = serde_json::to_string_pretty(value).expect("report serializes");
        s.push('\n');
        s
    };
    match &g.out {
        Some(path) => {
            fs::write(path, text).map_err(|source| Error::File {
                path: path.clone(),
                source,
            })?;
            println!("{}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
