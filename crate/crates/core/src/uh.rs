//! Uncertainty handling: a few solutions are evaluated twice, the rank
//! changes between the two copies measure the noise level, and the number of
//! evaluations per solution is adapted multiplicatively.

use nalgebra::DVector;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cma::{default_lambda, rank_indices, step, CmaHyperparams, CmaState};
use crate::distribution::{compute_weights, sample_population, GaussianParams, RecombinationWeights};
use crate::error::{check_dim, Error, Result};
use crate::problems::{evaluate_batch, Objective};
use crate::ra::stochastic_round;
use crate::rng::{Purpose, Streams};
use crate::strategy::{IterationLog, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UhConfig {
    pub theta: f64,
    pub alpha: f64,
    /// `lambda_reev = max(floor(reev_fraction * lambda), min_reev)`.
    pub reev_fraction: f64,
    pub min_reev: usize,
    pub n_eval: f64,
}

impl Default for UhConfig {
    fn default() -> Self {
        Self {
            theta: 0.2,
            alpha: 1.5,
            reev_fraction: 0.1,
            min_reev: 2,
            n_eval: 1.0,
        }
    }
}

impl UhConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.theta > 0.0
            && self.theta < 1.0
            && self.alpha > 1.0
            && self.reev_fraction > 0.0
            && self.reev_fraction <= 1.0
            && self.n_eval >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid uncertainty-handling settings {self:?}"
            )))
        }
    }

    pub fn lambda_reev(&self, lambda: usize) -> usize {
        ((self.reev_fraction * lambda as f64).floor() as usize)
            .max(self.min_reev)
            .min(lambda)
    }
}

/// Lower `theta/2`-quantile of `{|k - r| : k = 1, ..., 2 lambda - 1}`, taking
/// the element at 1-based position `max(1, ceil(theta/2 (2 lambda - 1)))` of
/// the sorted multiset. Also defined for `r = 0`.
pub fn delta_lim(r: i64, theta: f64, lambda: usize) -> f64 {
    let n = 2 * lambda as i64 - 1;
    let pos = ((theta / 2.0 * n as f64).ceil() as i64).clamp(1, n);
    let mut seen = 0;
    let mut v = 0;
    loop {
        seen += if v == 0 {
            i64::from((1..=n).contains(&r))
        } else {
            i64::from(r - v >= 1 && r - v <= n) + i64::from(r + v >= 1 && r + v <= n)
        };
        if seen >= pos {
            return v as f64;
        }
        v += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankChangeReport {
    pub s: f64,
    /// `|r_{i,1} - r_{i,2}| - 1` per reevaluated solution, in `reev` order.
    pub deltas: Vec<i64>,
}

/// 1-based ranks of both copies of every solution within all `2 lambda`
/// values; ties ordered by (value, solution index, copy index).
pub fn union_ranks(f1: &[f64], f2: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    check_dim(f1.len(), f2.len())?;
    if f1.iter().chain(f2).any(|v| v.is_nan()) {
        return Err(Error::InvalidEvaluation("NaN in rank-change values".into()));
    }
    let mut all: Vec<(f64, usize, usize)> = f1
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i, 0))
        .chain(f2.iter().enumerate().map(|(i, &v)| (v, i, 1)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut r1 = vec![0; f1.len()];
    let mut r2 = vec![0; f1.len()];
    for (rank, &(_, i, copy)) in all.iter().enumerate() {
        if copy == 0 {
            r1[i] = rank + 1;
        } else {
            r2[i] = rank + 1;
        }
    }
    Ok((r1, r2))
}

/// Uncertainty level `s` from two evaluation rounds; `f2[i]` must equal
/// `f1[i]` for solutions outside `reev`.
pub fn uncertainty_level(f1: &[f64], f2: &[f64], reev: &[usize], theta: f64) -> Result<RankChangeReport> {
    if reev.is_empty() {
        return Err(Error::InvalidArgument("no reevaluated solutions".into()));
    }
    let lambda = f1.len();
    let (r1, r2) = union_ranks(f1, f2)?;
    let mut total = 0.0;
    let mut deltas = Vec::with_capacity(reev.len());
    for &i in reev {
        if i >= lambda {
            return Err(Error::InvalidArgument(format!("reevaluated index {i} out of range")));
        }
        let (a, b) = (r1[i] as i64, r2[i] as i64);
        let delta = (a - b).abs() - 1;
        deltas.push(delta);
        let lim2 = delta_lim(b - i64::from(f2[i] > f1[i]), theta, lambda);
        let lim1 = delta_lim(a - i64::from(f1[i] > f2[i]), theta, lambda);
        total += 2.0 * delta as f64 - lim2 - lim1;
    }
    Ok(RankChangeReport {
        s: total / reev.len() as f64,
        deltas,
    })
}

/// `n * alpha` if `s > 0`, else `n / alpha`; never below 1.
pub fn adapt_n_eval_uh(n_eval: f64, alpha: f64, s: f64) -> f64 {
    let n = if s > 0.0 { n_eval * alpha } else { n_eval / alpha };
    n.max(1.0)
}

/// CMA-ES with uncertainty handling by reevaluation.
#[derive(Debug, Clone)]
pub struct UhCmaEs {
    params: GaussianParams,
    state: CmaState,
    hyper: CmaHyperparams,
    weights: RecombinationWeights,
    config: UhConfig,
}

impl UhCmaEs {
    pub fn new(params: GaussianParams, lambda: Option<usize>, config: UhConfig) -> Result<Self> {
        config.validate()?;
        let d = params.dim();
        let lambda = lambda.unwrap_or_else(|| default_lambda(d));
        let weights = compute_weights(lambda)?;
        let hyper = CmaHyperparams::recommended(d, lambda, &weights);
        hyper.validate()?;
        Ok(Self {
            state: CmaState::new(d),
            params,
            hyper,
            weights,
            config,
        })
    }

    pub fn n_eval(&self) -> f64 {
        self.config.n_eval
    }
}

impl Optimizer for UhCmaEs {
    fn name(&self) -> &'static str {
        "uh"
    }

    fn params(&self) -> &GaussianParams {
        &self.params
    }

    fn iteration(&self) -> u64 {
        self.state.t
    }

    fn step(&mut self, objective: &mut dyn Objective, streams: &Streams) -> Result<IterationLog> {
        let t = self.state.t;
        let lambda = self.hyper.lambda;
        let n_bar = stochastic_round(self.config.n_eval, &mut streams.rng(t, Purpose::Rounding)).max(1);
        let pop = sample_population(&self.params, lambda, &mut streams.rng(t, Purpose::Sampling))?;
        let mut noise = streams.rng(t, Purpose::Noise);
        let first = evaluate_batch(objective, &pop.x, n_bar, &mut noise)?;
        let f1 = first.means();

        let reev: Vec<usize> = {
            let mut idx = index::sample(
                &mut streams.rng(t, Purpose::Selection),
                lambda,
                self.config.lambda_reev(lambda),
            )
            .into_vec();
            idx.sort_unstable();
            idx
        };
        let xs: Vec<DVector<f64>> = reev.iter().map(|&i| pop.x[i].clone()).collect();
        let second = evaluate_batch(objective, &xs, n_bar, &mut noise)?;
        let mut f2 = f1.clone();
        let mut combined = f1.clone();
        for (k, &i) in reev.iter().enumerate() {
            let m2 = second.raw[k].iter().sum::<f64>() / n_bar as f64;
            f2[i] = m2;
            combined[i] = 0.5 * (f1[i] + m2);
        }

        let report = uncertainty_level(&f1, &f2, &reev, self.config.theta)?;
        self.config.n_eval = adapt_n_eval_uh(self.config.n_eval, self.config.alpha, report.s);

        let ranking = rank_indices(&combined)?;
        let (outcome, state) = step(&self.params, &self.state, &self.hyper, &self.weights, &pop, &ranking)?;
        self.params = outcome.params()?;
        self.state = state;

        let mut log = IterationLog::basic(first.evaluations() + second.evaluations(), lambda, self.params.sigma());
        log.n_eval = Some(self.config.n_eval);
        log.n_eval_used = Some(n_bar);
        log.uncertainty = Some(report.s);
        Ok(log)
    }
}
