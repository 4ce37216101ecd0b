mod common;

use common::{json, stderr, stdout, Fixture};
use soce_core::soup::load_checkpoint;

fn code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn correlations_report_records_default_tau() {
    let f = Fixture::new();
    let o = f.soce(&["correlations", "--scores", "scores.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["tau"], 0.5);
    assert_eq!(v["categories"], serde_json::json!(["A", "B", "C"]));
    assert_eq!(v["matrix"][0][1], -1.0);
    assert_eq!(v["low_correlation_set"], serde_json::json!(["A", "B", "C"]));
    assert!(v["mean_offdiagonal"].is_number());
}

#[test]
fn tau_override_is_recorded() {
    let f = Fixture::new();
    let v = json(&f.soce(&["correlations", "--scores", "scores.csv", "--tau", "0.01"]));
    assert_eq!(v["tau"], 0.01);
}

#[test]
fn malformed_csv_exits_2_with_diagnostic() {
    let f = Fixture::new();
    f.write("bad.csv", "model,A,B\nM1,1,oops\n");
    let o = f.soce(&["correlations", "--scores", "bad.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).is_empty());
    assert!(stderr(&o).contains("oops"), "{}", stderr(&o));
}

#[test]
fn missing_input_file_exits_2() {
    let f = Fixture::new();
    let o = f.soce(&["correlations", "--scores", "nope.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let f = Fixture::new();
    let o = f.soce(&["frobnicate"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&f.soce(&[])), 64);
    assert_eq!(code(&f.soce(&["run", "--no-such-flag"])), 64);
}

#[test]
fn help_and_version_succeed() {
    let f = Fixture::new();
    let o = f.soce(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["correlations", "select", "search", "soup", "run", "shapley", "winrate", "corr-shift", "baselines"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
    assert_eq!(code(&f.soce(&["--version"])), 0);
}

#[test]
fn conflicting_evaluators_are_a_usage_error() {
    let f = Fixture::new();
    let o = f.soce(&["run", "--synthetic-config", "syn3.json", "--evaluator-cmd", "./scorer.sh"]);
    assert_eq!(code(&o), 64);
}

#[test]
fn select_reports_experts() {
    let f = Fixture::new();
    let v = json(&f.soce(&["select", "--scores", "scores.csv"]));
    assert_eq!(v["per_category"]["A"], "M1");
    assert_eq!(v["per_category"]["C"], "M3");
    assert_eq!(v["experts"], serde_json::json!(["M1", "M2", "M3"]));
}

#[test]
fn select_without_weak_categories_fails_validation() {
    let f = Fixture::new();
    f.write("flat.csv", "model,A,B\nM1,1,1\nM2,2,2\nM3,3,3\n");
    let o = f.soce(&["select", "--scores", "flat.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("no weakly-correlated"));
}

#[test]
fn shapley_hand_game() {
    let f = Fixture::new();
    let o = f.soce(&["shapley", "--game", "game.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["values"]["A"], 1.5);
    assert_eq!(v["values"]["B"], 2.5);
    let s = json(&f.soce(&["shapley", "--game", "game.json", "--method", "subset"]));
    assert_eq!(s["values"], v["values"]);
}

#[test]
fn shapley_over_synthetic_players() {
    let f = Fixture::new();
    let o = f.soce(&["shapley", "--synthetic-config", "syn3.json", "--player", "M1", "--player", "M2+M3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    let total = v["values"]["M1"].as_f64().unwrap() + v["values"]["M2+M3"].as_f64().unwrap();
    assert!((total - v["grand_value"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn run_on_three_candidate_synthetic_fixture() {
    let f = Fixture::new();
    let o = f.soce(&["run", "--synthetic-config", "syn3.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["outcome"], "searched");
    assert_eq!(v["assignment"]["experts"], serde_json::json!(["M1", "M2"]));
    let entries = v["recipe"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for e in entries {
        assert_eq!((e["weight_numerator"].as_u64(), e["weight_denominator"].as_u64()), (Some(1), Some(2)));
    }
    let want = 100.0 * (-0.25f64).exp();
    assert!((v["final_macro"].as_f64().unwrap() - want).abs() < 1e-9);
    assert_eq!(v["telemetry"]["recipes_evaluated"], 9);
}

#[test]
fn run_on_two_candidates_reports_degenerate_outcome() {
    let f = Fixture::new();
    let o = f.soce(&["run", "--synthetic-config", "syn2.json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["outcome"], "degenerate");
    assert!(stderr(&o).contains("degenerate"));
}

#[test]
fn table_output() {
    let f = Fixture::new();
    let o = f.soce(&["baselines", "--synthetic-config", "syn3.json", "--table"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("uniform (all candidates)"));
    assert!(text.contains("77.88"));
    let o = f.soce(&["correlations", "--scores", "scores.csv", "--table"]);
    assert!(stdout(&o).contains("mean off-diagonal"));
}

#[test]
fn out_flag_writes_report_and_prints_path() {
    let f = Fixture::new();
    let o = f.soce(&["search", "--synthetic-config", "syn3.json", "--models", "M1,M3", "--out", "search.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "search.json");
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("search.json")).unwrap()).unwrap();
    assert_eq!(v["evaluation_count"], 9);
}

#[test]
fn soup_identity_recipe_round_trips() {
    let f = Fixture::new();
    f.write(
        "one.json",
        r#"{"entries": [{"model": "M2", "weight_numerator": 1, "weight_denominator": 1}]}"#,
    );
    let o = f.soce(&["soup", "--recipe", "one.json", "--checkpoint-dir", "ckpt", "--out", "out.safetensors"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = load_checkpoint(f.path("ckpt/M2.safetensors")).unwrap();
    let b = load_checkpoint(f.path("out.safetensors")).unwrap();
    assert_eq!(a.tensors(), b.tensors());
}

#[test]
fn soup_three_entry_recipe() {
    let f = Fixture::new();
    f.write(
        "three.json",
        r#"{"entries": [
            {"model": "M1", "weight_numerator": 1, "weight_denominator": 2},
            {"model": "M2", "weight_numerator": 1, "weight_denominator": 5},
            {"model": "M3", "weight_numerator": 3, "weight_denominator": 10}]}"#,
    );
    let args = ["soup", "--recipe", "three.json", "--checkpoint-dir", "ckpt", "--out", "s.safetensors"];
    assert_eq!(code(&f.soce(&args)), 0);
    let first = std::fs::read(f.path("s.safetensors")).unwrap();
    assert_eq!(code(&f.soce(&args)), 0);
    assert_eq!(std::fs::read(f.path("s.safetensors")).unwrap(), first);

    // Checkpoint scales 1, 2, 4 blend to 0.5 + 0.4 + 1.2 = 2.1.
    let m = load_checkpoint(f.path("s.safetensors")).unwrap();
    let bias = m.get("bias").unwrap().to_f64();
    assert_eq!(bias, vec![2.1f32 as f64, -2.1f32 as f64, 1.05f32 as f64]);
}

#[test]
fn soup_of_incompatible_checkpoints_exits_3_with_table() {
    let f = Fixture::new();
    f.checkpoint("ckpt/M9.safetensors", 1.0, &[3, 2]);
    f.write(
        "bad.json",
        r#"{"entries": [
            {"model": "M1", "weight_numerator": 1, "weight_denominator": 2},
            {"model": "M9", "weight_numerator": 1, "weight_denominator": 2}]}"#,
    );
    let o = f.soce(&["soup", "--recipe", "bad.json", "--checkpoint-dir", "ckpt", "--out", "x.safetensors"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("embed") && err.contains("shape"), "{err}");
    assert!(!f.path("x.safetensors").exists());
}

#[test]
fn soup_with_missing_checkpoint_exits_2() {
    let f = Fixture::new();
    f.write(
        "ghost.json",
        r#"{"entries": [{"model": "ghost", "weight_numerator": 1, "weight_denominator": 1}]}"#,
    );
    let o = f.soce(&["soup", "--recipe", "ghost.json", "--checkpoint-dir", "ckpt", "--out", "x.safetensors"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_report_reproduces_the_soup() {
    let f = Fixture::new();
    let o = f.soce(&[
        "run",
        "--scores",
        "scores.csv",
        "--evaluator-cmd",
        "./scorer.sh",
        "--checkpoint-dir",
        "ckpt",
        "--soup-out",
        "run.safetensors",
        "--out",
        "report.json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(f.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["outcome"], "searched");
    assert_eq!(report["telemetry"]["recipes_evaluated"], 37);

    let o = f.soce(&["soup", "--recipe", "report.json", "--out", "again.safetensors"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(f.path("run.safetensors")).unwrap(),
        std::fs::read(f.path("again.safetensors")).unwrap()
    );
}

#[test]
fn synthetic_run_report_reproduces_the_soup() {
    let f = Fixture::new();
    let run = ["run", "--synthetic-config", "syn3.json", "--soup-out", "a.safetensors", "--out", "r.json"];
    assert_eq!(code(&f.soce(&run)), 0);
    let o = f.soce(&["soup", "--synthetic-config", "syn3.json", "--recipe", "r.json", "--out", "b.safetensors"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(f.path("a.safetensors")).unwrap(), std::fs::read(f.path("b.safetensors")).unwrap());
}

#[test]
fn evaluator_failure_exits_4() {
    let f = Fixture::new();
    let o = f.soce(&["run", "--scores", "scores.csv", "--evaluator-cmd", "./failing.sh", "--checkpoint-dir", "ckpt"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("scorer crashed"), "{}", stderr(&o));
}

#[test]
fn missing_evaluator_is_validation_error() {
    let f = Fixture::new();
    let o = f.soce(&["run", "--scores", "scores.csv"]);
    assert_eq!(code(&o), 2);
    let o = f.soce(&["run", "--scores", "scores.csv", "--evaluator-cmd", "./scorer.sh", "--checkpoint-dir", "nowhere"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn winrate_report() {
    let f = Fixture::new();
    f.write(
        "outcomes.json",
        r#"{"tasks": ["t1", "t2", "t3", "t4"],
            "results": {"soup": [true, true, false, true],
                        "a": [true, false, false, false],
                        "b": [true, true, false, false]}}"#,
    );
    let o = f.soce(&["winrate", "--outcomes", "outcomes.json", "--soup", "soup", "--candidates", "a,b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["retention"]["a"], 1.0);
    assert_eq!(v["new_solve"]["universe"], 2);
    assert_eq!(v["new_solve"]["solved"], 1);
    assert_eq!(v["single_failure_completion"]["universe"], 1);
    assert_eq!(v["single_failure_completion"]["solved"], 1);
}

#[test]
fn corr_shift_of_a_population_with_itself() {
    let f = Fixture::new();
    let o = f.soce(&["corr-shift", "--pre", "scores.csv", "--post", "scores.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["delta"], 0.0);
}

#[test]
fn jobs_flag_does_not_change_results() {
    let f = Fixture::new();
    let one = f.soce(&["search", "--synthetic-config", "syn3.json", "--models", "M1,M2,M3", "--jobs", "1"]);
    let many = f.soce(&["search", "--synthetic-config", "syn3.json", "--models", "M1,M2,M3", "--jobs", "4"]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, many.stdout);
    assert_eq!(json(&one)["evaluation_count"], 37);
}
