use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cma::default_lambda;
use crate::error::{Error, Result};
use crate::problems::{NoiseKind, NoiseModel, Objective, ProblemKey};
use crate::strategy::{StrategyConfig, StrategyKind};

use super::config::{default_budget, ExperimentConfig};
use super::ecdf::{compute_ecdf, ecdf_checkpoints, generate_targets, EcdfCurve, DEFAULT_TARGETS};
use super::record::{RunRecord, TerminalStatus};
use super::trial::run_trial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub status: TerminalStatus,
    pub message: Option<String>,
    pub evaluations: u64,
    pub final_f: Option<f64>,
    pub best_f: Option<f64>,
    /// Evaluations when `f(m)` first reached the stop target.
    pub evals_to_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialSummary>,
    pub successes: usize,
    /// Median evaluations to target, unreached trials counted as infinite;
    /// `None` when the median itself is infinite.
    pub median_evals_to_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub records: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn ecdf(&self) -> Result<EcdfCurve> {
        ecdf_for(&self.summary.config, &self.records)
    }
}

fn ecdf_for(config: &ExperimentConfig, records: &[RunRecord]) -> Result<EcdfCurve> {
    let problem = config.problem.build()?;
    let f0 = problem.clean_value(&problem.initial_mean);
    let targets = generate_targets(f0, DEFAULT_TARGETS)?;
    let lambda = config
        .overrides
        .lambda
        .unwrap_or_else(|| default_lambda(config.problem.dim));
    compute_ecdf(records, &targets, &ecdf_checkpoints(lambda, config.budget.max(1), 101))
}

/// Median of `values`, with `None` standing for infinity.
pub(crate) fn median_with_infinity(values: &[Option<u64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |e| e as f64)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    m.is_finite().then_some(m)
}

fn summarize(config: &ExperimentConfig, records: &[RunRecord]) -> ExperimentSummary {
    let trials: Vec<TrialSummary> = records
        .iter()
        .map(|r| TrialSummary {
            trial: r.trial,
            status: r.status,
            message: r.message.clone(),
            evaluations: r.evaluations(),
            final_f: r.final_f(),
            best_f: r.best_f(),
            evals_to_target: r.evals_to_target(config.stop_target),
        })
        .collect();
    let hits: Vec<Option<u64>> = trials.iter().map(|t| t.evals_to_target).collect();
    ExperimentSummary {
        config: config.clone(),
        successes: hits.iter().filter(|h| h.is_some()).count(),
        median_evals_to_target: median_with_infinity(&hits),
        trials,
    }
}

/// Runs all trials of `config` on up to `jobs` threads. Records come back
/// ordered by trial index regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<RunRecord>)>> = Mutex::new(Vec::with_capacity(config.trials));
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, config.trials) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= config.trials {
                    break;
                }
                let r = run_trial(config, i);
                results
                    .lock()
                    .expect("no worker panics while holding the lock")
                    .push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("workers finished");
    results.sort_by_key(|(i, _)| *i);
    let records = results.into_iter().map(|(_, r)| r).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        summary: summarize(config, &records),
        records,
    })
}

fn io(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("io: {e}"))
}

/// Writes `trial_NNN.csv`, `summary.json` and `ecdf.csv` into `dir`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(io)?;
    for rec in &result.records {
        let f = fs::File::create(dir.join(format!("trial_{:03}.csv", rec.trial))).map_err(io)?;
        rec.write_csv(std::io::BufWriter::new(f))?;
    }
    let json = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json).map_err(io)?;
    let f = fs::File::create(dir.join("ecdf.csv")).map_err(io)?;
    result.ecdf()?.write_csv(std::io::BufWriter::new(f))
}

/// Reads back what [`write_experiment`] wrote.
pub fn read_experiment(dir: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(dir.join("summary.json")).map_err(io)?;
    let summary: ExperimentSummary =
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("summary.json: {e}")))?;
    let mut records = Vec::with_capacity(summary.trials.len());
    for t in &summary.trials {
        let f = fs::File::open(dir.join(format!("trial_{:03}.csv", t.trial))).map_err(io)?;
        records.push(RunRecord {
            trial: t.trial,
            rows: RunRecord::read_rows(std::io::BufReader::new(f))?,
            status: t.status,
            message: t.message.clone(),
        });
    }
    Ok(ExperimentResult { summary, records })
}

/// Noise strengths swept for each noise model.
pub fn noise_grid(kind: NoiseKind) -> Vec<f64> {
    match kind {
        NoiseKind::MultGaussian => vec![0.5, 1.0, 1.5, 2.0],
        NoiseKind::MultUniform => vec![0.5, 1.0, 2.0, 4.0],
        NoiseKind::AddGaussian => vec![1.0, 10.0, 100.0, 1000.0],
        NoiseKind::None => vec![0.0],
    }
}

/// Cross product of strategies, problems and noise strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub strategies: Vec<StrategyKind>,
    /// Function and dimension as `"<function>:<d>"`.
    pub problems: Vec<String>,
    pub noise: Vec<NoiseKind>,
    /// Noise strengths per kind; the standard grid when absent.
    pub sigma_n: Option<Vec<f64>>,
    /// Evaluation budget; `10^6 d` when absent.
    pub budget: Option<u64>,
    pub trials: usize,
    pub seed: u64,
    pub overrides: StrategyConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: StrategyKind::ALL.to_vec(),
            problems: vec!["sphere:10".into()],
            noise: vec![NoiseKind::MultGaussian, NoiseKind::MultUniform, NoiseKind::AddGaussian],
            sigma_n: None,
            budget: None,
            trials: 20,
            seed: 0,
            overrides: StrategyConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for p in &self.problems {
            for &kind in &self.noise {
                let grid = self.sigma_n.clone().unwrap_or_else(|| noise_grid(kind));
                for &s in &grid {
                    let key = ProblemKey::parse_with_defaults(p, 10, NoiseModel::new(kind, s)?)?;
                    let key = ProblemKey {
                        noise: NoiseModel::new(kind, s)?,
                        ..key
                    };
                    for &strategy in &self.strategies {
                        let mut c = ExperimentConfig::new(strategy, key);
                        c.budget = self.budget.unwrap_or_else(|| default_budget(key.dim));
                        c.trials = self.trials;
                        c.seed = self.seed;
                        c.overrides = self.overrides;
                        out.push(c);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_treats_misses_as_infinite() {
        assert_eq!(median_with_infinity(&[Some(1), Some(3), None]), Some(3.0));
        assert_eq!(median_with_infinity(&[Some(1), None, None]), None);
        assert_eq!(median_with_infinity(&[Some(1), Some(3)]), Some(2.0));
    }

    #[test]
    fn threads_do_not_change_results() {
        let mut c = ExperimentConfig::new(StrategyKind::Ra, "sphere:3:add-gauss:1".parse().unwrap());
        c.budget = 2000;
        c.trials = 4;
        c.seed = 5;
        let a = run_experiment(&c, 1).unwrap();
        let b = run_experiment(&c, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.iter().map(|r| r.trial).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::new(StrategyKind::Lra, "rosenbrock:3:mult-uniform:1".parse().unwrap());
        c.budget = 500;
        c.trials = 2;
        let res = run_experiment(&c, 2).unwrap();
        write_experiment(dir.path(), &res).unwrap();
        let back = read_experiment(dir.path()).unwrap();
        assert_eq!(back.summary, res.summary);
        for (a, b) in back.records.iter().zip(&res.records) {
            for (x, y) in a.rows.iter().zip(&b.rows) {
                assert_eq!(x, y);
            }
            assert_eq!(a, b);
        }
        let ecdf = std::fs::read_to_string(dir.path().join("ecdf.csv")).unwrap();
        assert!(ecdf.starts_with("checkpoint,proportion\n"));
        assert_eq!(ecdf.lines().count(), 102);
    }

    #[test]
    fn sweep_grid() {
        let s = SweepConfig {
            strategies: vec![StrategyKind::Ra, StrategyKind::Lra],
            ..SweepConfig::default()
        };
        let all = s.expand().unwrap();
        assert_eq!(all.len(), 2 * 12);
        assert!(all.iter().any(|c| c.problem.to_string() == "sphere:10:add-gauss:1000"));
        assert_eq!(all[0].budget, 10_000_000);
    }
}
