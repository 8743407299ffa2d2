use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::record::RunRecord;

/// Hardest target value.
pub const FINAL_TARGET: f64 = 1e-3;
pub const DEFAULT_TARGETS: usize = 500;

/// `n` targets from `f0` down to `1e-3`, evenly spaced in log scale.
pub fn generate_targets(f0: f64, n: usize) -> Result<Vec<f64>> {
    if !(f0 > FINAL_TARGET) || !f0.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "initial value {f0} must exceed the final target {FINAL_TARGET}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least two targets, got {n}")));
    }
    let (hi, lo) = (f0.log10(), FINAL_TARGET.log10());
    let step = (hi - lo) / (n - 1) as f64;
    let mut t: Vec<f64> = (0..n).map(|k| 10f64.powf(hi - step * k as f64)).collect();
    t[0] = f0;
    t[n - 1] = FINAL_TARGET;
    Ok(t)
}

/// `n` evaluation counts geometrically spaced from `lambda` to `budget`.
pub fn ecdf_checkpoints(lambda: usize, budget: u64, n: usize) -> Vec<f64> {
    let lo = (lambda.max(1) as f64).ln();
    let hi = (budget.max(lambda as u64).max(1) as f64).ln();
    if n <= 1 {
        return vec![hi.exp()];
    }
    let mut c: Vec<f64> = (0..n)
        .map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp())
        .collect();
    c[0] = lambda.max(1) as f64;
    c[n - 1] = budget.max(lambda as u64).max(1) as f64;
    c
}

/// Fraction of (trial, target) pairs reached by each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfCurve {
    pub targets: Vec<f64>,
    pub checkpoints: Vec<f64>,
    pub proportion: Vec<f64>,
}

impl EcdfCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        wr.write_record(["checkpoint", "proportion"]).map_err(err)?;
        for (c, p) in self.checkpoints.iter().zip(&self.proportion) {
            wr.write_record([c.to_string(), p.to_string()]).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Best-so-far `f(m)` among rows with `evals_cum <= checkpoint`, counted
/// against every target.
pub fn compute_ecdf(records: &[RunRecord], targets: &[f64], checkpoints: &[f64]) -> Result<EcdfCurve> {
    if records.is_empty() || targets.is_empty() {
        return Err(Error::InvalidArgument("need at least one record and one target".into()));
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut hits = vec![0usize; checkpoints.len()];
    for rec in records {
        let mut best = Vec::with_capacity(rec.rows.len());
        let mut cur = f64::INFINITY;
        for row in &rec.rows {
            cur = cur.min(row.f_clean_at_mean);
            best.push(cur);
        }
        for (h, &c) in hits.iter_mut().zip(checkpoints) {
            let k = rec.rows.partition_point(|r| r.evals_cum as f64 <= c);
            if k > 0 {
                let b = best[k - 1];
                *h += sorted.len() - sorted.partition_point(|&t| t < b);
            }
        }
    }
    let total = (records.len() * targets.len()) as f64;
    Ok(EcdfCurve {
        targets: targets.to_vec(),
        checkpoints: checkpoints.to_vec(),
        proportion: hits.iter().map(|&h| h as f64 / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::{RunRow, TerminalStatus};
    use proptest::prelude::*;

    pub(crate) fn record(points: &[(u64, f64)]) -> RunRecord {
        RunRecord {
            trial: 0,
            rows: points
                .iter()
                .enumerate()
                .map(|(t, &(e, f))| RunRow {
                    t: t as u64,
                    evals_cum: e,
                    ..RunRow::initial(f, 1.0)
                })
                .collect(),
            status: TerminalStatus::BudgetExhausted,
            message: None,
        }
    }

    #[test]
    fn target_examples() {
        let t = generate_targets(10.0, 5).unwrap();
        for (a, b) in t.iter().zip([10.0, 1.0, 0.1, 0.01, 0.001]) {
            assert!((a / b - 1.0).abs() < 1e-12, "{a} vs {b}");
        }
        let t = generate_targets(123.4, 500).unwrap();
        assert_eq!(t.len(), 500);
        assert_eq!(t[0], 123.4);
        assert_eq!(t[499], 1e-3);
        let r0 = t[1] / t[0];
        for w in t[1..499].windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-12);
        }
        assert!(generate_targets(1e-3, 500).is_err());
    }

    #[test]
    fn stagnating_trial_hits_only_first_target() {
        let t = generate_targets(90.0, 500).unwrap();
        let rec = record(&[(0, 90.0), (10, 95.0), (20, 91.0)]);
        let c = compute_ecdf(&[rec], &t, &ecdf_checkpoints(10, 100, 11)).unwrap();
        assert!(c.proportion.iter().all(|&p| p == 1.0 / 500.0));
    }

    #[test]
    fn half_the_targets() {
        let t = generate_targets(10.0, 500).unwrap();
        let rec = record(&[(0, 10.0), (50, t[249])]);
        let c = compute_ecdf(&[rec], &t, &[100.0]).unwrap();
        assert_eq!(c.proportion, vec![0.5]);
    }

    #[test]
    fn checkpoints_are_geometric() {
        let c = ecdf_checkpoints(10, 100_000, 101);
        assert_eq!(c.len(), 101);
        assert!((c[0] - 10.0).abs() < 1e-9 && (c[100] - 1e5).abs() < 1e-6);
    }

    fn brute(records: &[RunRecord], targets: &[f64], checkpoints: &[f64]) -> Vec<f64> {
        checkpoints
            .iter()
            .map(|&c| {
                let mut hit = 0;
                for rec in records {
                    for &t in targets {
                        if rec
                            .rows
                            .iter()
                            .any(|r| r.evals_cum as f64 <= c && r.f_clean_at_mean <= t)
                        {
                            hit += 1;
                        }
                    }
                }
                hit as f64 / (records.len() * targets.len()) as f64
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(runs in proptest::collection::vec(proptest::collection::vec((1u64..50, 0.0f64..20.0), 1..20), 1..5)) {
            let records: Vec<RunRecord> = runs.iter().map(|steps| {
                let mut e = 0;
                let pts: Vec<(u64, f64)> = std::iter::once((0, 20.0)).chain(steps.iter().map(|&(de, f)| { e += de; (e, f) })).collect();
                record(&pts)
            }).collect();
            let t = generate_targets(20.0, 50).unwrap();
            let cp = ecdf_checkpoints(2, 1000, 30);
            let c = compute_ecdf(&records, &t, &cp).unwrap();
            prop_assert_eq!(&c.proportion, &brute(&records, &t, &cp));
            for w in c.proportion.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let mut more = records.clone();
            more.push(record(&[(0, 0.0)]));
            let c2 = compute_ecdf(&more, &t, &cp).unwrap();
            for (a, b) in c.proportion.iter().zip(&c2.proportion) {
                prop_assert!(b >= a);
            }
        }
    }
}
