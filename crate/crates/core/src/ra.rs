//! Reevaluation adaptation.
//!
//! Each solution is evaluated `n` times. Besides the update computed from the
//! average of all `n` values, two more candidate updates are computed from
//! the averages over two disjoint halves of the evaluations. The correlation
//! of the two half-sample directions, tracked with exponential moving
//! averages, measures how much of the update is signal. The relaxed count
//! `n_eval` is increased when the correlation falls below a target that
//! itself depends on `n_eval`, and decreased otherwise. The applied update
//! uses learning-rate adaptation on top.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cma::{default_lambda, rank_indices, step, CmaHyperparams, CmaState};
use crate::distribution::{
    compute_weights, sample_population, unvec_row_major, whiten_cov_direction, whiten_mean_direction, GaussianParams,
    RecombinationWeights,
};
use crate::error::{check_dim, Error, Result};
use crate::lra::{apply_or_reject, whitened_directions, LraConfig, LraState, VARIANCE_FLOOR};
use crate::problems::{evaluate_batch, Objective};
use crate::rng::{Purpose, Streams};
use crate::strategy::{IterationLog, Optimizer};

/// `floor(n) + 1` with probability `n - floor(n)`, else `floor(n)`.
pub fn stochastic_round<R: Rng + ?Sized>(n: f64, rng: &mut R) -> usize {
    let base = n.floor();
    let frac = n - base;
    let up = frac > 0.0 && rng.random::<f64>() < frac;
    base as usize + usize::from(up)
}

/// Per-solution averages over the first half, the second half and all of the
/// evaluations. With an odd count the last evaluation enters only `full`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfAverages {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub full: Vec<f64>,
}

pub fn half_averages(raw: &[Vec<f64>]) -> Result<HalfAverages> {
    let n = raw.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one evaluation per solution".into(),
        ));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut out = HalfAverages {
        first: Vec::with_capacity(raw.len()),
        second: Vec::with_capacity(raw.len()),
        full: Vec::with_capacity(raw.len()),
    };
    let h = n / 2;
    for row in raw {
        check_dim(n, row.len())?;
        let full = mean(row);
        if n == 1 {
            out.first.push(full);
            out.second.push(full);
        } else {
            out.first.push(mean(&row[..h]));
            out.second.push(mean(&row[h..2 * h]));
        }
        out.full.push(full);
    }
    Ok(out)
}

/// How the numerator of the correlation estimate measures `E1 . E2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumeratorMetric {
    /// Euclidean inner product of the (already whitened) accumulators.
    #[default]
    Plain,
    /// Accumulators whitened once more with the current distribution before
    /// the inner product.
    Fisher,
}

/// Which parameter block an accumulator tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Mean,
    Cov,
}

/// Moving averages of two paired direction streams and their inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrAccumulator {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
    pub v1: f64,
    pub v2: f64,
    pub i: f64,
    pub beta: f64,
    pub count: u64,
}

impl CorrAccumulator {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accumulation factor must be in (0, 1], got {beta}"
            )));
        }
        Ok(Self {
            e1: DVector::zeros(dim),
            e2: DVector::zeros(dim),
            v1: 0.0,
            v2: 0.0,
            i: 0.0,
            beta,
            count: 0,
        })
    }

    pub fn accumulate(&mut self, d1: &DVector<f64>, d2: &DVector<f64>) -> Result<()> {
        check_dim(self.e1.len(), d1.len())?;
        check_dim(self.e1.len(), d2.len())?;
        if d1.iter().chain(d2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidEvaluation("non-finite direction".into()));
        }
        let b = self.beta;
        self.e1 *= 1.0 - b;
        self.e1.axpy(b, d1, 1.0);
        self.e2 *= 1.0 - b;
        self.e2.axpy(b, d2, 1.0);
        self.v1 = (1.0 - b) * self.v1 + b * d1.norm_squared();
        self.v2 = (1.0 - b) * self.v2 + b * d2.norm_squared();
        self.i = (1.0 - b) * self.i + b * d1.dot(d2);
        self.count += 1;
        Ok(())
    }

    /// `(I - E1.E2) / sqrt((V1 - |E1|^2)(V2 - |E2|^2))`, clipped to `[-1, 1]`.
    pub fn estimate_correlation(&self) -> Result<f64> {
        self.correlation_with(self.e1.dot(&self.e2))
    }

    /// As [`Self::estimate_correlation`] with the numerator inner product
    /// taken in the chosen metric.
    pub fn estimate_correlation_in(
        &self,
        metric: NumeratorMetric,
        params: &GaussianParams,
        block: Block,
    ) -> Result<f64> {
        let inner = match metric {
            NumeratorMetric::Plain => self.e1.dot(&self.e2),
            NumeratorMetric::Fisher => match block {
                Block::Mean => whiten_mean_direction(params, &self.e1)?.dot(&whiten_mean_direction(params, &self.e2)?),
                Block::Cov => {
                    let d = params.dim();
                    let a = whiten_cov_direction(params, &unvec_row_major(&self.e1, d)?)?;
                    let b = whiten_cov_direction(params, &unvec_row_major(&self.e2, d)?)?;
                    a.dot(&b)
                }
            },
        };
        self.correlation_with(inner)
    }

    fn correlation_with(&self, inner: f64) -> Result<f64> {
        let var1 = self.v1 - self.e1.norm_squared();
        let var2 = self.v2 - self.e2.norm_squared();
        if var1 <= 0.0 && var2 <= 0.0 {
            return Err(Error::UndefinedEstimate(
                "correlation with zero variance in both streams".into(),
            ));
        }
        let denom = (var1.max(VARIANCE_FLOOR) * var2.max(VARIANCE_FLOOR)).sqrt();
        let rho = (self.i - inner) / denom;
        if rho.is_nan() {
            return Err(Error::UndefinedEstimate("correlation is NaN".into()));
        }
        Ok(rho.clamp(-1.0, 1.0))
    }
}

/// `rho_base ^ ((1 + ln n - ln n_min) * min(n - 1, 1))`.
pub fn target_correlation(n_eval: f64, n_min: f64, rho_base: f64) -> f64 {
    let xi = (1.0 + n_eval.ln() - n_min.ln()) * (n_eval - 1.0).min(1.0);
    rho_base.powf(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaConfig {
    pub n_min: f64,
    pub n_init: f64,
    pub rho_base: f64,
    pub gamma: f64,
    pub beta_m: f64,
    pub beta_sigma: f64,
    pub metric: NumeratorMetric,
    pub lra: LraConfig,
}

impl Default for RaConfig {
    fn default() -> Self {
        Self {
            n_min: 1.2,
            n_init: 1.2,
            rho_base: 0.8,
            gamma: 0.1,
            beta_m: 0.1,
            beta_sigma: 0.03,
            metric: NumeratorMetric::Plain,
            lra: LraConfig::default(),
        }
    }
}

/// Relaxed reevaluation count and its schedule constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReevalState {
    pub n_eval: f64,
    pub n_min: f64,
    pub rho_base: f64,
    pub gamma: f64,
}

impl ReevalState {
    pub fn new(n_eval: f64, n_min: f64, rho_base: f64, gamma: f64) -> Result<Self> {
        if !(n_min > 1.0) || n_eval < n_min || !(rho_base > 0.0 && rho_base < 1.0) || !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid reevaluation settings n_eval={n_eval}, n_min={n_min}, rho_base={rho_base}, gamma={gamma}"
            )));
        }
        Ok(Self {
            n_eval,
            n_min,
            rho_base,
            gamma,
        })
    }

    pub fn target(&self) -> f64 {
        target_correlation(self.n_eval, self.n_min, self.rho_base)
    }
}

/// `n *= exp(gamma * clip(1 - rho_min / rho_target, -1, 1))`, floored at `n_min`.
///
/// A correlation above target lowers the count, one below target raises it.
pub fn update_n_eval(state: ReevalState, rho_min: f64, rho_target: f64) -> Result<ReevalState> {
    if !(rho_target > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target correlation must be positive, got {rho_target}"
        )));
    }
    let dir = (1.0 - rho_min / rho_target).clamp(-1.0, 1.0);
    let n = (state.n_eval * (state.gamma * dir).exp()).max(state.n_min);
    Ok(ReevalState { n_eval: n, ..state })
}

/// CMA-ES with reevaluation adaptation and learning-rate adaptation.
#[derive(Debug, Clone)]
pub struct RaCmaEs {
    params: GaussianParams,
    state: CmaState,
    hyper: CmaHyperparams,
    weights: RecombinationWeights,
    lra: LraState,
    reeval: ReevalState,
    corr_m: CorrAccumulator,
    corr_sigma: CorrAccumulator,
    metric: NumeratorMetric,
}

impl RaCmaEs {
    pub fn new(params: GaussianParams, lambda: Option<usize>, config: RaConfig) -> Result<Self> {
        let d = params.dim();
        let lambda = lambda.unwrap_or_else(|| default_lambda(d));
        let weights = compute_weights(lambda)?;
        let hyper = CmaHyperparams::recommended(d, lambda, &weights);
        hyper.validate()?;
        Ok(Self {
            state: CmaState::new(d),
            lra: LraState::new(d, config.lra)?,
            reeval: ReevalState::new(config.n_init, config.n_min, config.rho_base, config.gamma)?,
            corr_m: CorrAccumulator::new(d, config.beta_m)?,
            corr_sigma: CorrAccumulator::new(d * d, config.beta_sigma)?,
            metric: config.metric,
            params,
            hyper,
            weights,
        })
    }

    pub fn reeval(&self) -> &ReevalState {
        &self.reeval
    }

    pub fn lra_state(&self) -> &LraState {
        &self.lra
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedEstimate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl Optimizer for RaCmaEs {
    fn name(&self) -> &'static str {
        "ra"
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
        let n_bar = stochastic_round(self.reeval.n_eval, &mut streams.rng(t, Purpose::Rounding)).max(1);
        let pop = sample_population(&self.params, lambda, &mut streams.rng(t, Purpose::Sampling))?;
        let batch = evaluate_batch(objective, &pop.x, n_bar, &mut streams.rng(t, Purpose::Noise))?;
        let avg = half_averages(&batch.raw)?;

        let (outcome, state) = step(
            &self.params,
            &self.state,
            &self.hyper,
            &self.weights,
            &pop,
            &rank_indices(&avg.full)?,
        )?;
        let (dm, ds) = whitened_directions(&self.params, &outcome)?;
        let ((dm1, ds1), (dm2, ds2)) = if n_bar == 1 {
            ((dm.clone(), ds.clone()), (dm.clone(), ds.clone()))
        } else {
            let half = |f: &[f64]| -> Result<(DVector<f64>, DVector<f64>)> {
                let (o, _) = step(
                    &self.params,
                    &self.state,
                    &self.hyper,
                    &self.weights,
                    &pop,
                    &rank_indices(f)?,
                )?;
                whitened_directions(&self.params, &o)
            };
            (half(&avg.first)?, half(&avg.second)?)
        };

        self.corr_m.accumulate(&dm1, &dm2)?;
        self.corr_sigma.accumulate(&ds1, &ds2)?;
        let rho_m = optional(
            self.corr_m
                .estimate_correlation_in(self.metric, &self.params, Block::Mean),
        )?;
        let rho_sigma = optional(
            self.corr_sigma
                .estimate_correlation_in(self.metric, &self.params, Block::Cov),
        )?;
        let rho_target = self.reeval.target();
        let rho_min = match (rho_m, rho_sigma) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if let Some(rho_min) = rho_min {
            self.reeval = update_n_eval(self.reeval, rho_min, rho_target)?;
        }

        let eta_m_old = self.lra.rates.eta_m;
        self.lra.observe(&dm, &ds)?;
        apply_or_reject(&mut self.params, &mut self.lra, &outcome, eta_m_old)?;
        self.state = state;

        let mut log = IterationLog::basic(batch.evaluations(), lambda, self.params.sigma());
        log.n_eval = Some(self.reeval.n_eval);
        log.n_eval_used = Some(n_bar);
        log.eta_m = Some(self.lra.rates.eta_m);
        log.eta_sigma = Some(self.lra.rates.eta_sigma);
        log.rho_m = rho_m;
        log.rho_sigma = rho_sigma;
        log.rho_target = Some(rho_target);
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{FunctionKind, NoiseKind, NoiseModel, NoisyProblem};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn stochastic_round_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| stochastic_round(3.0, &mut rng) == 3));
        let n = 100_000;
        let mean = (0..n).map(|_| stochastic_round(1.2, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.2).abs() < 0.01, "{mean}");
        let twos = (0..n).filter(|_| stochastic_round(1.999, &mut rng) == 2).count();
        assert!(twos as f64 / n as f64 > 0.997);
        assert!((0..1000).all(|_| matches!(stochastic_round(1.999, &mut rng), 1 | 2)));
    }

    #[test]
    fn half_average_examples() {
        let a = half_averages(&[vec![5.0]]).unwrap();
        assert_eq!((a.first[0], a.second[0], a.full[0]), (5.0, 5.0, 5.0));
        let a = half_averages(&[vec![1.0, 3.0, 5.0, 7.0]]).unwrap();
        assert_eq!((a.first[0], a.second[0], a.full[0]), (2.0, 6.0, 4.0));
        let a = half_averages(&[vec![1.0, 3.0, 5.0, 7.0, 9.0]]).unwrap();
        assert_eq!((a.first[0], a.second[0], a.full[0]), (2.0, 6.0, 5.0));
        assert!(half_averages(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn correlation_accumulator_examples() {
        let v = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let mut a = CorrAccumulator::new(3, 1.0).unwrap();
        a.accumulate(&v, &v).unwrap();
        assert_eq!(a.i, v.norm_squared());
        assert_eq!((a.v1, a.v2), (v.norm_squared(), v.norm_squared()));
        assert_eq!(a.e1, v);

        let mut a = CorrAccumulator::new(2, 1.0).unwrap();
        a.accumulate(
            &DVector::from_column_slice(&[1.0, 0.0]),
            &DVector::from_column_slice(&[0.0, 3.0]),
        )
        .unwrap();
        assert_eq!(a.i, 0.0);

        let mut a = CorrAccumulator::new(2, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let d = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            a.accumulate(&d, &d).unwrap();
        }
        assert_relative_eq!(a.estimate_correlation().unwrap(), 1.0, epsilon = 1e-12);
        assert!(CorrAccumulator::new(2, 0.1).unwrap().estimate_correlation().is_err());
    }

    #[test]
    fn inner_product_moving_average_matches_limit() {
        // E[I] -> mu1.mu2 + Tr Cov12 for stationary streams.
        let (d, beta, rho, mu) = (4, 0.1, 0.5f64, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut acc = CorrAccumulator::new(d, beta).unwrap();
        let mut samples = Vec::new();
        for k in 0..10_000 {
            let z1: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let z2: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let d1 = z1.add_scalar(mu);
            let d2 = (&z1 * rho + &z2 * (1.0 - rho * rho).sqrt()).add_scalar(mu);
            acc.accumulate(&d1, &d2).unwrap();
            if k >= 100 && k % 20 == 0 {
                samples.push(acc.i);
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = d as f64 * mu * mu + rho * d as f64;
        assert!((mean - expected).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn target_correlation_values() {
        assert_relative_eq!(
            target_correlation(1.2, 1.2, 0.8),
            0.8f64.powf(0.2),
            max_relative = 1e-12
        );
        let xi = 1.0 + (2.0f64 / 1.2).ln();
        assert_relative_eq!(target_correlation(2.0, 1.2, 0.8), 0.8f64.powf(xi), max_relative = 1e-12);
        assert!((target_correlation(1.000001, 1.000001, 0.8) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn update_n_eval_examples() {
        let s = ReevalState::new(2.0, 1.2, 0.8, 0.1).unwrap();
        assert_eq!(update_n_eval(s, 0.7, 0.7).unwrap().n_eval, 2.0);
        assert_relative_eq!(update_n_eval(s, -0.5, 0.7).unwrap().n_eval, 2.0 * 0.1f64.exp());
        assert_relative_eq!(update_n_eval(s, 0.35, 0.7).unwrap().n_eval, 2.0 * 0.05f64.exp());
        let s = ReevalState::new(1.2, 1.2, 0.8, 0.1).unwrap();
        assert_eq!(update_n_eval(s, 1.0, 0.9).unwrap().n_eval, 1.2);
        assert!(update_n_eval(s, 0.5, 0.0).is_err());
    }

    fn run_ra(noise: NoiseModel, d: usize, iters: usize, seed: u64) -> (RaCmaEs, Vec<IterationLog>, NoisyProblem) {
        let mut problem = NoisyProblem::with_initial(FunctionKind::Sphere, d, noise).unwrap();
        let mut opt = RaCmaEs::new(problem.initial_params().unwrap(), None, RaConfig::default()).unwrap();
        let streams = Streams::new(seed);
        let mut logs = Vec::new();
        for _ in 0..iters {
            let before = problem.evaluations();
            let log = opt.step(&mut problem, &streams).unwrap();
            assert_eq!(problem.evaluations() - before, log.evaluations);
            assert_eq!(log.evaluations, (log.lambda * log.n_eval_used.unwrap()) as u64);
            logs.push(log);
        }
        (opt, logs, problem)
    }

    #[test]
    fn noiseless_sphere_needs_no_reevaluation() {
        let (_, logs, _) = run_ra(NoiseModel::none(), 10, 200, 1);
        let mut n: Vec<f64> = logs.iter().map(|l| l.n_eval.unwrap()).collect();
        n.sort_by(f64::total_cmp);
        assert!(n[n.len() / 2] < 2.0, "median n_eval {}", n[n.len() / 2]);
        assert!(logs.iter().all(|l| l.n_eval.unwrap() >= 1.2));
    }

    /// Ignores its input; the value is pure noise.
    struct PureNoise {
        d: usize,
        count: u64,
    }

    impl Objective for PureNoise {
        fn dim(&self) -> usize {
            self.d
        }
        fn evaluate(&mut self, _: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
            self.count += 1;
            rng.sample(StandardNormal)
        }
        fn clean_value(&self, _: &DVector<f64>) -> f64 {
            0.0
        }
        fn evaluations(&self) -> u64 {
            self.count
        }
    }

    #[test]
    fn pure_noise_raises_reevaluations() {
        let params = GaussianParams::isotropic(DVector::zeros(5), 1.0).unwrap();
        let mut opt = RaCmaEs::new(params, None, RaConfig::default()).unwrap();
        let mut obj = PureNoise { d: 5, count: 0 };
        let streams = Streams::new(4);
        let mut first = Vec::new();
        let mut last = Vec::new();
        for k in 0..150 {
            let log = opt.step(&mut obj, &streams).unwrap();
            if k < 10 {
                first.push(log.n_eval.unwrap());
            }
            if k >= 140 {
                last.push(log.n_eval.unwrap());
            }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(avg(&last) > 2.0 * avg(&first), "{first:?} -> {last:?}");
    }

    /// Deterministic objective whose half averages always agree.
    #[test]
    fn coinciding_rankings_keep_minimum_count() {
        let params = GaussianParams::isotropic(DVector::from_element(4, 1.0), 0.5).unwrap();
        let config = RaConfig {
            n_init: 3.0,
            ..RaConfig::default()
        };
        let mut opt = RaCmaEs::new(params, None, config).unwrap();
        let mut problem = NoisyProblem::with_initial(FunctionKind::Sphere, 4, NoiseModel::none()).unwrap();
        let streams = Streams::new(2);
        let mut last = None;
        for _ in 0..60 {
            last = Some(opt.step(&mut problem, &streams).unwrap());
        }
        let log = last.unwrap();
        assert!(log.rho_m.unwrap() > 0.999);
        assert_eq!(log.n_eval.unwrap(), 1.2);
    }

    #[test]
    fn deterministic_iterations() {
        let noise = NoiseModel::new(NoiseKind::MultGaussian, 1.0).unwrap();
        let (a, la, _) = run_ra(noise, 5, 30, 9);
        let (b, lb, _) = run_ra(noise, 5, 30, 9);
        assert_eq!(la, lb);
        assert_eq!(a.params().mean(), b.params().mean());
    }

    #[test]
    fn fisher_metric_matches_plain_at_identity() {
        let params = GaussianParams::isotropic(DVector::zeros(3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = CorrAccumulator::new(3, 0.1).unwrap();
        for _ in 0..50 {
            let a = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let b = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            acc.accumulate(&a, &(&a + b)).unwrap();
        }
        let plain = acc.estimate_correlation().unwrap();
        let fisher = acc
            .estimate_correlation_in(NumeratorMetric::Fisher, &params, Block::Mean)
            .unwrap();
        assert_relative_eq!(plain, fisher, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn n_eval_never_below_minimum(n in 1.2f64..50.0, rho in -1.0f64..1.0, target in 0.01f64..1.0) {
            let s = ReevalState::new(n, 1.2, 0.8, 0.1).unwrap();
            prop_assert!(update_n_eval(s, rho, target).unwrap().n_eval >= 1.2);
        }

        #[test]
        fn target_is_monotone(a in 1.2f64..100.0, b in 1.2f64..100.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (tl, th) = (target_correlation(lo, 1.2, 0.8), target_correlation(hi, 1.2, 0.8));
            prop_assert!(th <= tl + 1e-15);
            prop_assert!(th > 0.0 && tl <= 1.0);
        }

        #[test]
        fn correlation_is_clipped(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = CorrAccumulator::new(3, 0.5).unwrap();
            for _ in 0..5 {
                let a = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                let b = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
                acc.accumulate(&a, &b).unwrap();
                let r = acc.estimate_correlation().unwrap();
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
