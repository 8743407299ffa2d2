use crate::error::{Error, Result};
use crate::problems::Objective;
use crate::rng::Streams;
use crate::strategy::build;

use super::config::ExperimentConfig;
use super::record::{RunRecord, RunRow, TerminalStatus};

/// Runs trial `trial_index` until the budget is spent, `f(m)` reaches the
/// stop target, or the distribution degenerates. The last iteration may
/// overshoot the budget. Deterministic in `(config.seed, trial_index)`.
pub fn run_trial(config: &ExperimentConfig, trial_index: usize) -> Result<RunRecord> {
    config.validate()?;
    let mut problem = config.problem.build()?;
    let params = problem.initial_params()?;
    let mut record = RunRecord {
        trial: trial_index,
        rows: Vec::new(),
        status: TerminalStatus::BudgetExhausted,
        message: None,
    };
    if config.budget == 0 {
        return Ok(record);
    }
    let f0 = problem.clean_value(params.mean());
    record.rows.push(RunRow::initial(f0, params.sigma()));
    if f0 <= config.stop_target {
        record.status = TerminalStatus::TargetReached;
        return Ok(record);
    }
    let mut opt = build(config.strategy, params, &config.overrides)?;
    let streams = Streams::for_trial(config.seed, trial_index as u64);
    while problem.evaluations() < config.budget {
        let log = match opt.step(&mut problem, &streams) {
            Ok(log) => log,
            Err(e @ (Error::Degeneracy(_) | Error::InvalidEvaluation(_) | Error::UndefinedEstimate(_))) => {
                log::warn!("trial {trial_index} stopped: {e}");
                record.status = TerminalStatus::Degeneracy;
                record.message = Some(e.to_string());
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        let f = problem.clean_value(opt.params().mean());
        if !f.is_finite() {
            record.status = TerminalStatus::Degeneracy;
            record.message = Some(format!("non-finite f(m) = {f}"));
            return Ok(record);
        }
        record
            .rows
            .push(RunRow::from_log(opt.iteration(), problem.evaluations(), f, &log));
        if f <= config.stop_target {
            record.status = TerminalStatus::TargetReached;
            return Ok(record);
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::StrategyKind;

    fn config(strategy: StrategyKind, key: &str, budget: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(strategy, key.parse().unwrap());
        c.budget = budget;
        c.seed = 17;
        c
    }

    #[test]
    fn zero_budget_gives_empty_record() {
        let r = run_trial(&config(StrategyKind::Cmaes, "sphere:10:none:0", 0), 0).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.status, TerminalStatus::BudgetExhausted);
    }

    #[test]
    fn noiseless_sphere_reaches_target() {
        let r = run_trial(&config(StrategyKind::Cmaes, "sphere:10:none:0", 10_000), 0).unwrap();
        assert_eq!(r.status, TerminalStatus::TargetReached);
        assert!(r.evaluations() < 10_000);
    }

    #[test]
    fn records_are_reproducible_and_consistent() {
        for s in StrategyKind::ALL {
            let c = config(s, "ellipsoid:4:mult-gauss:1", 3000);
            let a = run_trial(&c, 2).unwrap();
            let b = run_trial(&c, 2).unwrap();
            assert_eq!(a, b, "{s}");
            assert_eq!(a.rows[0].evals_cum, 0);
            for w in a.rows.windows(2) {
                assert!(w[1].evals_cum > w[0].evals_cum, "{s}");
            }
            let last = a.rows.last().unwrap();
            assert!(last.evals_cum >= 3000 || a.status != TerminalStatus::BudgetExhausted);
            let c = run_trial(&c, 3).unwrap();
            assert_ne!(a.rows, c.rows);
        }
    }
}
