//! Plain-text tables for `--table`.

use soce_core::analysis::CorrelationShiftReport;
use soce_core::pipeline::SoceRun;
use soce_core::scorestore::CorrelationReport;
use soce_core::selection::AssignmentReport;
use soce_core::weightgrid::SearchResult;

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn correlations(r: &CorrelationReport) -> String {
    let w = r.categories.iter().map(String::len).max().unwrap_or(0).max(8);
    let mut out = format!("{:<w$}", "");
    for c in &r.categories {
        out.push_str(&format!("  {c:>w$}"));
    }
    out.push('\n');
    for (c, row) in r.categories.iter().zip(&r.matrix) {
        out.push_str(&format!("{c:<w$}"));
        for v in row {
            out.push_str(&format!("  {:>w$}", cell(*v)));
        }
        out.push('\n');
    }
    out.push_str(&format!("mean off-diagonal: {}\n", cell(r.mean_offdiagonal)));
    out.push_str(&format!("tau {}: weak = [{}]\n", r.tau, r.low_correlation_set.join(", ")));
    out
}

pub fn assignment(r: &AssignmentReport) -> String {
    let w = r.per_category.keys().map(String::len).max().unwrap_or(0).max(8);
    let mut out = format!("{:<w$}  expert\n", "category");
    for (c, m) in &r.per_category {
        out.push_str(&format!("{c:<w$}  {m}\n"));
    }
    out.push_str(&format!("experts: {}\n", r.experts.join(", ")));
    out
}

pub fn search(r: &SearchResult) -> String {
    let labels: Vec<String> = r.evaluated.iter().map(|e| e.recipe.to_string()).collect();
    let w = labels.iter().map(String::len).max().unwrap_or(0).max(6);
    let mut out = format!("{:<w$}  {:>12}\n", "recipe", "macro");
    for (label, e) in labels.iter().zip(&r.evaluated) {
        out.push_str(&format!("{label:<w$}  {:>12.6}\n", e.objective));
    }
    out.push_str(&format!("best: {} = {:.6}\n", r.best, r.best_objective));
    out
}

pub fn run(r: &SoceRun) -> String {
    let w = r.final_scores.scores.keys().map(String::len).max().unwrap_or(0).max(8);
    let mut out = format!("outcome: {:?}\n", r.outcome);
    if let Some(n) = &r.notice {
        out.push_str(&format!("notice: {n}\n"));
    }
    out.push_str(&format!("weak categories: [{}]\n", r.low_correlation_set.join(", ")));
    if let Some(a) = &r.assignment {
        out.push_str(&format!("experts: {}\n", a.experts.join(", ")));
    }
    out.push_str(&format!("recipe: {}\n", r.recipe));
    out.push_str(&format!("{:<w$}  {:>12}\n", "category", "score"));
    for (c, v) in &r.final_scores.scores {
        out.push_str(&format!("{c:<w$}  {v:>12.6}\n"));
    }
    out.push_str(&format!("{:<w$}  {:>12.6}\n", "macro", r.final_macro));
    out
}

pub fn corr_shift(r: &CorrelationShiftReport) -> String {
    let mut out = String::from("pair                       pre        post\n");
    for p in &r.per_pair {
        let pair = format!("{} / {}", p.first, p.second);
        out.push_str(&format!("{pair:<22}  {:>8}  {:>8}\n", cell(p.pre), cell(p.post)));
    }
    out.push_str(&format!(
        "mean over {} pairs: {:.4} -> {:.4} (delta {:+.4})\n",
        r.compared_pairs, r.pre_mean, r.post_mean, r.delta
    ));
    out
}
