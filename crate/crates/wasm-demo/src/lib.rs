//! Browser bindings: one trajectory, an ECDF comparison of strategies, and a
//! selection-scheme explorer. Every export returns a JSON string.

use noisy_cmaes::cma::default_lambda;
use noisy_cmaes::harness::{
    compute_ecdf, ecdf_checkpoints, generate_targets, run_trial, ExperimentConfig, FINAL_TARGET,
};
use noisy_cmaes::problems::{NoiseModel, Objective, ProblemKey};
use noisy_cmaes::strategy::StrategyKind;
use noisy_cmaes::utility::{utility_from_quantiles, QuantilePair, SelectionScheme};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Budgets above this would stall the page.
pub const MAX_BUDGET: u64 = 5_000_000;
const MAX_POINTS: usize = 400;

type DemoResult = std::result::Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn config(strategy: &str, problem: &str, budget: u64, seed: u64) -> Result<ExperimentConfig, String> {
    if budget == 0 || budget > MAX_BUDGET {
        return Err(format!("budget must be in 1..={MAX_BUDGET}"));
    }
    let strategy: StrategyKind = strategy.parse().map_err(err)?;
    let key = ProblemKey::parse_with_defaults(problem, 10, NoiseModel::none()).map_err(err)?;
    let mut c = ExperimentConfig::new(strategy, key);
    c.budget = budget;
    c.seed = seed;
    c.trials = 1;
    c.validate().map_err(err)?;
    Ok(c)
}

#[derive(Serialize)]
struct Point {
    evals: u64,
    f: f64,
    sigma: f64,
    n_eval: Option<f64>,
    lambda: Option<usize>,
    eta_m: Option<f64>,
}

#[derive(Serialize)]
struct Trajectory {
    strategy: String,
    problem: String,
    status: String,
    evaluations: u64,
    best_f: Option<f64>,
    points: Vec<Point>,
}

pub fn trajectory(strategy: &str, problem: &str, budget: u64, seed: u64) -> DemoResult {
    let c = config(strategy, problem, budget, seed)?;
    let r = run_trial(&c, 0).map_err(err)?;
    let stride = r.rows.len().div_ceil(MAX_POINTS).max(1);
    let last = r.rows.len() - 1;
    let points = r
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i == last)
        .map(|(_, row)| Point {
            evals: row.evals_cum,
            f: row.f_clean_at_mean,
            sigma: row.sigma,
            n_eval: row.n_eval,
            lambda: row.lambda,
            eta_m: row.eta_m,
        })
        .collect();
    let out = Trajectory {
        strategy: c.strategy.to_string(),
        problem: c.problem.to_string(),
        status: format!("{:?}", r.status),
        evaluations: r.evaluations(),
        best_f: r.best_f(),
        points,
    };
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Curve {
    strategy: String,
    reached: usize,
    checkpoints: Vec<f64>,
    proportion: Vec<f64>,
}

#[derive(Serialize)]
struct Comparison {
    problem: String,
    budget: u64,
    trials: usize,
    curves: Vec<Curve>,
}

/// ECDF of each comma-separated strategy over `trials` sequential trials.
pub fn comparison(strategies: &str, problem: &str, budget: u64, trials: usize, seed: u64) -> DemoResult {
    if trials == 0 || trials > 50 {
        return Err("trials must be in 1..=50".into());
    }
    let mut curves = Vec::new();
    let mut key = None;
    for name in strategies.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut c = config(name, problem, budget, seed)?;
        c.trials = trials;
        let records = (0..trials)
            .map(|i| run_trial(&c, i))
            .collect::<noisy_cmaes::Result<Vec<_>>>()
            .map_err(err)?;
        let built = c.problem.build().map_err(err)?;
        let targets = generate_targets(built.clean_value(&built.initial_mean), 100).map_err(err)?;
        let lambda = c.overrides.lambda.unwrap_or_else(|| default_lambda(c.problem.dim));
        let checkpoints = ecdf_checkpoints(lambda, budget, 60);
        let e = compute_ecdf(&records, &targets, &checkpoints).map_err(err)?;
        curves.push(Curve {
            strategy: c.strategy.to_string(),
            reached: records
                .iter()
                .filter(|r| r.evals_to_target(FINAL_TARGET).is_some())
                .count(),
            checkpoints: e.checkpoints,
            proportion: e.proportion,
        });
        key = Some(c.problem.to_string());
    }
    let problem = key.ok_or("no strategy given")?;
    serde_json::to_string(&Comparison {
        problem,
        budget,
        trials,
        curves,
    })
    .map_err(err)
}

#[derive(Serialize)]
struct SchemeView {
    scheme: String,
    q: Vec<f64>,
    w: Vec<f64>,
    integral: f64,
    tie_utility: f64,
}

/// Samples `w` on `[0, 1]` and the tie-averaged utility on `[q_lt, q_le]`.
pub fn scheme_view(scheme: &str, lambda: usize, q_lt: f64, q_le: f64) -> DemoResult {
    let s = match scheme {
        "truncation" => SelectionScheme::truncation(lambda).map_err(err)?,
        "convex" => SelectionScheme::Convex,
        "concave" => SelectionScheme::Concave,
        "linear" => SelectionScheme::Linear,
        other => return Err(format!("unknown scheme `{other}`")),
    };
    let pair = QuantilePair::new(q_lt, q_le).map_err(err)?;
    let q: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let w = q.iter().map(|&x| s.w(x)).collect();
    let view = SchemeView {
        scheme: s.name().to_string(),
        integral: s.integral(),
        tie_utility: utility_from_quantiles(pair, &s),
        q,
        w,
    };
    serde_json::to_string(&view).map_err(err)
}

#[wasm_bindgen(js_name = runTrajectory)]
pub fn run_trajectory(strategy: &str, problem: &str, budget: f64, seed: f64) -> Result<String, JsValue> {
    trajectory(strategy, problem, budget as u64, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = compareStrategies)]
pub fn compare_strategies(
    strategies: &str,
    problem: &str,
    budget: f64,
    trials: u32,
    seed: f64,
) -> Result<String, JsValue> {
    comparison(strategies, problem, budget as u64, trials as usize, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = selectionScheme)]
pub fn selection_scheme(scheme: &str, lambda: u32, q_lt: f64, q_le: f64) -> Result<String, JsValue> {
    scheme_view(scheme, lambda as usize, q_lt, q_le).map_err(|e| JsValue::from_str(&e))
}
