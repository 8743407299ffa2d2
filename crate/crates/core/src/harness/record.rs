use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::IterationLog;

/// One iteration as persisted; `t = 0` is the initial mean before any evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: u64,
    pub evals_cum: u64,
    pub f_clean_at_mean: f64,
    pub sigma: f64,
    pub n_eval: Option<f64>,
    pub n_eval_int: Option<usize>,
    pub lambda: Option<usize>,
    pub eta_m: Option<f64>,
    pub eta_sigma: Option<f64>,
    pub rho_m: Option<f64>,
    pub rho_sigma: Option<f64>,
    pub rho_target: Option<f64>,
    pub uncertainty: Option<f64>,
}

impl RunRow {
    pub fn initial(f: f64, sigma: f64) -> Self {
        Self {
            t: 0,
            evals_cum: 0,
            f_clean_at_mean: f,
            sigma,
            n_eval: None,
            n_eval_int: None,
            lambda: None,
            eta_m: None,
            eta_sigma: None,
            rho_m: None,
            rho_sigma: None,
            rho_target: None,
            uncertainty: None,
        }
    }

    pub fn from_log(t: u64, evals_cum: u64, f: f64, log: &IterationLog) -> Self {
        Self {
            t,
            evals_cum,
            f_clean_at_mean: f,
            sigma: log.sigma,
            n_eval: log.n_eval,
            n_eval_int: log.n_eval_used,
            lambda: Some(log.lambda),
            eta_m: log.eta_m,
            eta_sigma: log.eta_sigma,
            rho_m: log.rho_m,
            rho_sigma: log.rho_sigma,
            rho_target: log.rho_target,
            uncertainty: log.uncertainty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalStatus {
    BudgetExhausted,
    TargetReached,
    Degeneracy,
}

/// Trajectory of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: usize,
    pub rows: Vec<RunRow>,
    pub status: TerminalStatus,
    /// Reason for a degeneracy stop.
    pub message: Option<String>,
}

impl RunRecord {
    pub fn evaluations(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.evals_cum)
    }

    pub fn best_f(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.f_clean_at_mean).min_by(f64::total_cmp)
    }

    pub fn final_f(&self) -> Option<f64> {
        self.rows.last().map(|r| r.f_clean_at_mean)
    }

    /// Evaluations at the first row with `f <= target`.
    pub fn evals_to_target(&self, target: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.f_clean_at_mean <= target)
            .map(|r| r.evals_cum)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(HEADER).map_err(io_err)?;
        for row in &self.rows {
            wr.serialize(row).map_err(io_err)?;
        }
        wr.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Rows only; trial index and status come from the summary.
    pub fn read_rows<R: Read>(r: R) -> Result<Vec<RunRow>> {
        let mut rd = csv::Reader::from_reader(r);
        rd.deserialize().map(|row| row.map_err(io_err)).collect()
    }
}

const HEADER: [&str; 13] = [
    "t",
    "evals_cum",
    "f_clean_at_mean",
    "sigma",
    "n_eval",
    "n_eval_int",
    "lambda",
    "eta_m",
    "eta_sigma",
    "rho_m",
    "rho_sigma",
    "rho_target",
    "uncertainty",
];

fn io_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_missing_fields() {
        let mut log = IterationLog::basic(10, 10, 0.5);
        log.n_eval = Some(1.3);
        log.rho_m = Some(-0.25);
        let rec = RunRecord {
            trial: 0,
            rows: vec![RunRow::initial(90.0, 2.0), RunRow::from_log(1, 10, 80.5, &log)],
            status: TerminalStatus::BudgetExhausted,
            message: None,
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,evals_cum,f_clean_at_mean,sigma,n_eval,n_eval_int,lambda,"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,,,,,,"));
        assert_eq!(RunRecord::read_rows(buf.as_slice()).unwrap(), rec.rows);
        assert_eq!(rec.evals_to_target(81.0), Some(10));
        assert_eq!(rec.best_f(), Some(80.5));
    }

    #[test]
    fn status_names() {
        assert_eq!(
            serde_json::to_string(&TerminalStatus::BudgetExhausted).unwrap(),
            "\"budget-exhausted\""
        );
    }
}
