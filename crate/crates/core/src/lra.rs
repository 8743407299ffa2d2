//! Learning-rate adaptation: SNR estimation from whitened update directions
//! and multiplicative adaptation of the learning rates for `m` and `Sigma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cma::{default_lambda, rank_indices, step, CmaHyperparams, CmaState, StepOutcome};
use crate::distribution::{
    compute_weights, sample_population, symmetrize, whiten_cov_direction, whiten_mean_direction, GaussianParams,
    RecombinationWeights,
};
use crate::error::{check_dim, Error, Result};
use crate::problems::{evaluate_batch, Objective};
use crate::rng::{Purpose, Streams};
use crate::strategy::{IterationLog, Optimizer};

/// Floor applied to variance terms before they are used as divisors.
pub const VARIANCE_FLOOR: f64 = 1e-30;

/// Exponential moving averages of a direction and of its squared norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrAccumulator {
    pub e: DVector<f64>,
    pub v: f64,
    pub beta: f64,
    pub count: u64,
}

impl SnrAccumulator {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accumulation factor must be in (0, 1], got {beta}"
            )));
        }
        Ok(Self {
            e: DVector::zeros(dim),
            v: 0.0,
            beta,
            count: 0,
        })
    }

    pub fn accumulate(&mut self, delta: &DVector<f64>) -> Result<()> {
        check_dim(self.e.len(), delta.len())?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEvaluation("non-finite direction".into()));
        }
        let b = self.beta;
        self.e *= 1.0 - b;
        self.e.axpy(b, delta, 1.0);
        self.v = (1.0 - b) * self.v + b * delta.norm_squared();
        self.count += 1;
        Ok(())
    }

    /// `(|E|^2 - beta/(2-beta) V) / (V - |E|^2)`, denominator floored.
    pub fn estimate_snr(&self) -> Result<f64> {
        if self.v == 0.0 {
            return Err(Error::UndefinedEstimate("SNR with zero accumulated variance".into()));
        }
        let e2 = self.e.norm_squared();
        let b = self.beta;
        Ok((e2 - b / (2.0 - b) * self.v) / (self.v - e2).max(VARIANCE_FLOOR))
    }

    /// Number of accumulations before the estimate is used.
    pub fn warm_up(&self) -> u64 {
        (1.0 / self.beta).ceil() as u64
    }

    pub fn warmed_up(&self) -> bool {
        self.count >= self.warm_up()
    }
}

/// `eta * exp(min(gamma eta, beta) * clip(snr / (alpha eta) - 1, -1, 1))`, capped at 1.
pub fn update_learning_rate(eta: f64, snr_hat: f64, alpha: f64, gamma: f64, beta: f64) -> f64 {
    let step = (gamma * eta).min(beta);
    let dir = (snr_hat / (alpha * eta) - 1.0).clamp(-1.0, 1.0);
    (eta * (step * dir).exp()).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub eta_m: f64,
    pub eta_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LraConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub beta_m: f64,
    pub beta_sigma: f64,
    pub eta_init: f64,
    /// How `sigma` follows a change of `eta_m` after the update.
    pub step_correction: StepCorrection,
}

/// Rescaling of `sigma` when the mean learning rate changes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepCorrection {
    /// `sigma *= eta_old / eta_new`: a smaller learning rate widens the
    /// distribution, as a larger population would.
    #[default]
    Inverse,
    /// `sigma *= eta_new / eta_old`.
    Proportional,
    None,
}

impl StepCorrection {
    pub fn factor(self, eta_old: f64, eta_new: f64) -> f64 {
        match self {
            StepCorrection::Inverse => eta_old / eta_new,
            StepCorrection::Proportional => eta_new / eta_old,
            StepCorrection::None => 1.0,
        }
    }
}

impl Default for LraConfig {
    fn default() -> Self {
        Self {
            alpha: 1.4,
            gamma: 0.1,
            beta_m: 0.1,
            beta_sigma: 0.03,
            eta_init: 1.0,
            step_correction: StepCorrection::Inverse,
        }
    }
}

/// Both SNR accumulators and the current learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LraState {
    pub config: LraConfig,
    pub acc_m: SnrAccumulator,
    pub acc_sigma: SnrAccumulator,
    pub rates: LearningRates,
    pub snr_m: Option<f64>,
    pub snr_sigma: Option<f64>,
}

impl LraState {
    pub fn new(d: usize, config: LraConfig) -> Result<Self> {
        if !(config.eta_init > 0.0 && config.eta_init <= 1.0) || config.alpha <= 0.0 || config.gamma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid learning-rate configuration {config:?}"
            )));
        }
        Ok(Self {
            acc_m: SnrAccumulator::new(d, config.beta_m)?,
            acc_sigma: SnrAccumulator::new(d * d, config.beta_sigma)?,
            rates: LearningRates {
                eta_m: config.eta_init,
                eta_sigma: config.eta_init,
            },
            snr_m: None,
            snr_sigma: None,
            config,
        })
    }

    /// Feeds whitened directions and, past warm-up, adapts each rate.
    pub fn observe(&mut self, dm_tilde: &DVector<f64>, dsigma_tilde: &DVector<f64>) -> Result<()> {
        self.acc_m.accumulate(dm_tilde)?;
        self.acc_sigma.accumulate(dsigma_tilde)?;
        let c = self.config;
        if self.acc_m.warmed_up() {
            let snr = self.acc_m.estimate_snr()?;
            self.snr_m = Some(snr);
            self.rates.eta_m = update_learning_rate(self.rates.eta_m, snr, c.alpha, c.gamma, c.beta_m);
        }
        if self.acc_sigma.warmed_up() {
            let snr = self.acc_sigma.estimate_snr()?;
            self.snr_sigma = Some(snr);
            self.rates.eta_sigma = update_learning_rate(self.rates.eta_sigma, snr, c.alpha, c.gamma, c.beta_sigma);
        }
        Ok(())
    }
}

/// `m + eta_m dm`, `Sigma + eta_Sigma dSigma`, split into unit-determinant
/// `C` and `sigma = det(Sigma)^(1/2d)`, then `sigma *= sigma_factor`.
pub fn apply_lra_update(
    params: &GaussianParams,
    delta_m: &DVector<f64>,
    delta_sigma: &DMatrix<f64>,
    rates: LearningRates,
    sigma_factor: f64,
) -> Result<GaussianParams> {
    let d = params.dim();
    check_dim(d, delta_m.len())?;
    check_dim(d, delta_sigma.nrows())?;
    let mean = params.mean() + delta_m * rates.eta_m;
    let full = symmetrize(&(params.full_cov() + delta_sigma * rates.eta_sigma));
    let split = GaussianParams::from_covariance(mean, &full)?;
    if !(sigma_factor > 0.0 && sigma_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step-size factor must be positive, got {sigma_factor}"
        )));
    }
    split.with_sigma(split.sigma() * sigma_factor)
}

/// Mean and covariance directions of `outcome` in local coordinates of `params`.
pub fn whitened_directions(params: &GaussianParams, outcome: &StepOutcome) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok((
        whiten_mean_direction(params, &outcome.delta_m)?,
        whiten_cov_direction(params, &outcome.delta_sigma)?,
    ))
}

/// Applies the learning-rate-scaled update; on a non-PD result the update is
/// rejected and `eta_Sigma` halved. Returns whether the update was accepted.
pub(crate) fn apply_or_reject(
    params: &mut GaussianParams,
    lra: &mut LraState,
    outcome: &StepOutcome,
    eta_m_old: f64,
) -> Result<bool> {
    let ratio = lra.config.step_correction.factor(eta_m_old, lra.rates.eta_m);
    match apply_lra_update(params, &outcome.delta_m, &outcome.delta_sigma, lra.rates, ratio) {
        Ok(p) => {
            *params = p;
            Ok(true)
        }
        Err(Error::Degeneracy(msg)) => {
            log::warn!("rejected non-positive-definite update: {msg}");
            lra.rates.eta_m = eta_m_old;
            lra.rates.eta_sigma *= 0.5;
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// CMA-ES with learning-rate adaptation.
#[derive(Debug, Clone)]
pub struct LraCmaEs {
    params: GaussianParams,
    state: CmaState,
    hyper: CmaHyperparams,
    weights: RecombinationWeights,
    lra: LraState,
}

impl LraCmaEs {
    pub fn new(params: GaussianParams, lambda: Option<usize>, config: LraConfig) -> Result<Self> {
        let d = params.dim();
        let lambda = lambda.unwrap_or_else(|| default_lambda(d));
        let weights = compute_weights(lambda)?;
        let hyper = CmaHyperparams::recommended(d, lambda, &weights);
        hyper.validate()?;
        Ok(Self {
            state: CmaState::new(d),
            lra: LraState::new(d, config)?,
            params,
            hyper,
            weights,
        })
    }

    pub fn learning_rates(&self) -> LearningRates {
        self.lra.rates
    }

    pub fn lra_state(&self) -> &LraState {
        &self.lra
    }
}

impl Optimizer for LraCmaEs {
    fn name(&self) -> &'static str {
        "lra"
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
        let pop = sample_population(&self.params, lambda, &mut streams.rng(t, Purpose::Sampling))?;
        let batch = evaluate_batch(objective, &pop.x, 1, &mut streams.rng(t, Purpose::Noise))?;
        let ranking = rank_indices(&batch.means())?;
        let (outcome, state) = step(&self.params, &self.state, &self.hyper, &self.weights, &pop, &ranking)?;
        let (dm, ds) = whitened_directions(&self.params, &outcome)?;
        let eta_m_old = self.lra.rates.eta_m;
        self.lra.observe(&dm, &ds)?;
        apply_or_reject(&mut self.params, &mut self.lra, &outcome, eta_m_old)?;
        self.state = state;
        let mut log = IterationLog::basic(batch.evaluations(), lambda, self.params.sigma());
        log.eta_m = Some(self.lra.rates.eta_m);
        log.eta_sigma = Some(self.lra.rates.eta_sigma);
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss_vec(rng: &mut ChaCha8Rng, d: usize, mean: f64, sd: f64) -> DVector<f64> {
        DVector::from_fn(d, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            mean + sd * z
        })
    }

    #[test]
    fn accumulate_examples() {
        let mut a = SnrAccumulator::new(3, 1.0).unwrap();
        let v = DVector::from_column_slice(&[1.0, 2.0, 2.0]);
        a.accumulate(&v).unwrap();
        assert_eq!(a.e, v);
        assert_eq!(a.v, 9.0);

        let mut a = SnrAccumulator::new(3, 0.25).unwrap();
        a.accumulate(&v).unwrap();
        let (e0, v0) = (a.e.clone(), a.v);
        for k in 1..=5 {
            a.accumulate(&DVector::zeros(3)).unwrap();
            assert_relative_eq!(a.v, v0 * 0.75f64.powi(k), max_relative = 1e-14);
            assert_relative_eq!(a.e, &e0 * 0.75f64.powi(k), max_relative = 1e-14);
        }
        assert!(a.accumulate(&DVector::from_element(3, f64::NAN)).is_err());
        assert!(a.accumulate(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn stationary_mean_of_squared_norm() {
        // E|E|^2 -> |mu|^2 + beta/(2-beta) d for i.i.d. N(mu, I) inputs.
        let (d, beta) = (5, 0.1);
        let mu = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let mut acc = SnrAccumulator::new(d, beta).unwrap();
        let mut samples = Vec::new();
        for k in 0..10_000 {
            acc.accumulate(&gauss_vec(&mut rng, d, mu, 1.0)).unwrap();
            if k >= 200 && k % 20 == 0 {
                samples.push(acc.e.norm_squared());
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = d as f64 * mu * mu + beta / (2.0 - beta) * d as f64;
        assert!((mean - expected).abs() < 3.0 * sd / n.sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn snr_of_constant_direction_is_huge() {
        let mut a = SnrAccumulator::new(2, 0.5).unwrap();
        let v = DVector::from_column_slice(&[1.0, 0.0]);
        for _ in 0..200 {
            a.accumulate(&v).unwrap();
        }
        assert!(a.estimate_snr().unwrap() > 1e10);
        assert!(SnrAccumulator::new(2, 0.5).unwrap().estimate_snr().is_err());
    }

    #[test]
    fn learning_rate_examples() {
        assert_eq!(update_learning_rate(0.1, 0.14, 1.4, 0.1, 0.1), 0.1);
        assert_relative_eq!(
            update_learning_rate(0.5, 1e9, 1.4, 0.1, 0.1),
            0.5 * (0.05f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            update_learning_rate(0.1, 0.07, 1.4, 0.1, 0.1),
            0.1 * (-0.005f64).exp(),
            max_relative = 1e-15
        );
        assert_eq!(update_learning_rate(1.0, 1e9, 1.4, 0.1, 0.1), 1.0);
    }

    #[test]
    fn lra_update_examples() {
        let p = GaussianParams::isotropic(DVector::from_element(2, 1.0), 1.5).unwrap();
        let same = apply_lra_update(
            &p,
            &DVector::from_element(2, 3.0),
            &DMatrix::identity(2, 2),
            LearningRates {
                eta_m: 0.0,
                eta_sigma: 0.0,
            },
            1.0,
        )
        .unwrap();
        assert_relative_eq!(same.mean(), p.mean());
        assert_relative_eq!(same.sigma(), p.sigma(), max_relative = 1e-14);
        assert_relative_eq!(same.cov(), p.cov(), epsilon = 1e-14);

        let p = GaussianParams::isotropic(DVector::zeros(2), 2.0).unwrap();
        let q = apply_lra_update(
            &p,
            &DVector::zeros(2),
            &DMatrix::zeros(2, 2),
            LearningRates {
                eta_m: 1.0,
                eta_sigma: 1.0,
            },
            1.0,
        )
        .unwrap();
        assert_relative_eq!(q.sigma(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(q.cov(), &DMatrix::identity(2, 2), epsilon = 1e-14);

        let bad = apply_lra_update(
            &p,
            &DVector::zeros(2),
            &(DMatrix::identity(2, 2) * -10.0),
            LearningRates {
                eta_m: 1.0,
                eta_sigma: 1.0,
            },
            1.0,
        );
        assert!(matches!(bad, Err(Error::Degeneracy(_))));
    }

    #[test]
    fn lra_solves_noiseless_sphere() {
        use crate::problems::{FunctionKind, NoiseModel, NoisyProblem};
        let mut problem = NoisyProblem::with_initial(FunctionKind::Sphere, 5, NoiseModel::none()).unwrap();
        let mut opt = LraCmaEs::new(problem.initial_params().unwrap(), None, LraConfig::default()).unwrap();
        let streams = Streams::new(3);
        for _ in 0..2000 {
            opt.step(&mut problem, &streams).unwrap();
            if problem.clean_value(opt.params().mean()) < 1e-8 {
                break;
            }
        }
        assert!(problem.clean_value(opt.params().mean()) < 1e-8);
    }

    proptest! {
        #[test]
        fn rates_stay_in_unit_interval(eta in 1e-6f64..=1.0, snr in -1e6f64..1e6, steps in 1usize..50) {
            let mut e = eta;
            for _ in 0..steps {
                e = update_learning_rate(e, snr, 1.4, 0.1, 0.1);
                prop_assert!(e > 0.0 && e <= 1.0);
            }
        }

        #[test]
        fn fixed_point_is_exact(eta in 1e-4f64..=1.0) {
            let next = update_learning_rate(eta, 1.4 * eta, 1.4, 0.1, 0.03);
            prop_assert!((next - eta).abs() <= 1e-15);
        }

        #[test]
        fn update_has_unit_determinant(seed in 0u64..1000, eta_s in 0.01f64..1.0, ratio in 0.5f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
            let p = GaussianParams::from_covariance(DVector::zeros(d), &(&a * a.transpose() + DMatrix::identity(d, d))).unwrap();
            let b = DMatrix::from_fn(d, d, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 0.1 * z });
            let ds = (&b + b.transpose()) * 0.5;
            let q = apply_lra_update(&p, &DVector::zeros(d), &ds, LearningRates { eta_m: 1.0, eta_sigma: eta_s }, ratio).unwrap();
            prop_assert!((q.cov().determinant() - 1.0).abs() < 1e-9);
        }
    }
}
