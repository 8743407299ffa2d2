//! Population-size adaptation: an evolution path over the whitened joint
//! update of mean and covariance drives a multiplicative change of `lambda`.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cma::{default_lambda, rank_indices, step, CmaHyperparams, CmaState};
use crate::distribution::{
    compute_weights, sample_population, whiten_cov_direction, whiten_mean_direction, GaussianParams,
    RecombinationWeights,
};
use crate::error::{Error, Result};
use crate::problems::{evaluate_batch, Objective};
use crate::ra::stochastic_round;
use crate::rng::{Purpose, Streams};
use crate::strategy::{IterationLog, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsaConfig {
    pub beta: f64,
    pub alpha: f64,
    /// Monte-Carlo repetitions for the normalization factor.
    pub n_mc: usize,
    pub step_size_correction: bool,
    /// Use the path coefficient `sqrt(2 (2 - beta))` instead of `sqrt(beta (2 - beta))`.
    pub doubled_path_coefficient: bool,
    pub lambda_min: Option<usize>,
    pub lambda_max: Option<usize>,
}

impl Default for PsaConfig {
    fn default() -> Self {
        Self {
            beta: 0.4,
            alpha: 1.4,
            n_mc: 500,
            step_size_correction: true,
            doubled_path_coefficient: false,
            lambda_min: None,
            lambda_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsaState {
    pub p_theta: DVector<f64>,
    pub gamma_theta: f64,
    pub lambda_real: f64,
    pub lambda_min: usize,
    pub lambda_max: usize,
    pub beta: f64,
    pub alpha: f64,
    pub doubled_path_coefficient: bool,
}

impl PsaState {
    pub fn new(d: usize, config: &PsaConfig) -> Result<Self> {
        let lambda_min = config.lambda_min.unwrap_or_else(|| default_lambda(d));
        let lambda_max = config.lambda_max.unwrap_or(lambda_min << 10);
        if lambda_min < 2 || lambda_max < lambda_min {
            return Err(Error::InvalidArgument(format!(
                "population bounds must satisfy 2 <= min <= max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        if !(config.beta > 0.0 && config.beta <= 1.0) || !(config.alpha > 0.0) || config.n_mc < 100 {
            return Err(Error::InvalidArgument(format!(
                "invalid population-size settings {config:?}"
            )));
        }
        Ok(Self {
            p_theta: DVector::zeros(d + d * d),
            gamma_theta: 0.0,
            lambda_real: lambda_min as f64,
            lambda_min,
            lambda_max,
            beta: config.beta,
            alpha: config.alpha,
            doubled_path_coefficient: config.doubled_path_coefficient,
        })
    }

    fn coefficient(&self) -> f64 {
        let b = self.beta;
        if self.doubled_path_coefficient {
            (2.0 * (2.0 - b)).sqrt()
        } else {
            (b * (2.0 - b)).sqrt()
        }
    }
}

/// Path, normalization and population-size update for one whitened joint
/// direction.
pub fn psa_update(state: &PsaState, whitened_delta_theta: &DVector<f64>, norm_factor: f64) -> Result<PsaState> {
    if !(norm_factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "normalization factor must be positive, got {norm_factor}"
        )));
    }
    crate::error::check_dim(state.p_theta.len(), whitened_delta_theta.len())?;
    let b = state.beta;
    let p = &state.p_theta * (1.0 - b) + whitened_delta_theta * (state.coefficient() / norm_factor);
    let gamma = (1.0 - b).powi(2) * state.gamma_theta + b * (2.0 - b);
    let lambda = state.lambda_real * (b * (gamma - p.norm_squared() / state.alpha)).exp();
    if lambda.is_nan() {
        return Err(Error::Degeneracy("population size became NaN".into()));
    }
    Ok(PsaState {
        p_theta: p,
        gamma_theta: gamma,
        lambda_real: lambda.clamp(state.lambda_min as f64, state.lambda_max as f64),
        ..state.clone()
    })
}

/// `(Sigma^{-1/2} dm, vec(Sigma^{-1/2} dSigma Sigma^{-1/2}) / sqrt 2)` stacked.
pub fn joint_direction(
    params: &GaussianParams,
    delta_m: &DVector<f64>,
    delta_sigma: &nalgebra::DMatrix<f64>,
) -> Result<DVector<f64>> {
    let a = whiten_mean_direction(params, delta_m)?;
    let b = whiten_cov_direction(params, delta_sigma)?;
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(&a);
    out.rows_mut(a.len(), b.len()).copy_from(&b);
    Ok(out)
}

/// Monte-Carlo estimate of the expected norm of the whitened joint direction
/// when the ranking is a uniformly random permutation. Evolution paths are
/// drawn from their stationary law under random selection, `N(0, C)` for
/// `p_c` and `N(0, I)` for `p_sigma`, and the path age is taken as large.
pub fn normalization_factor(
    params: &GaussianParams,
    hyper: &CmaHyperparams,
    weights: &RecombinationWeights,
    n_mc: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument(
            "need at least one Monte-Carlo repetition".into(),
        ));
    }
    let d = params.dim();
    let mut perm: Vec<usize> = (0..hyper.lambda).collect();
    let mut total = 0.0;
    for _ in 0..n_mc {
        let pop = sample_population(params, hyper.lambda, rng)?;
        perm.shuffle(rng);
        let gauss = |rng: &mut ChaCha8Rng| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let state = CmaState {
            p_sigma: gauss(rng),
            p_c: params.sqrt_cov() * gauss(rng),
            t: 1 << 20,
        };
        let (out, _) = step(params, &state, hyper, weights, &pop, &perm)?;
        total += joint_direction(params, &out.delta_m, &out.delta_sigma)?.norm();
    }
    Ok(total / n_mc as f64)
}

/// Blom approximation of the expected `i`-th smallest of `lambda` standard
/// normals: `Phi^{-1}((i - 0.375) / (lambda + 0.25))`.
pub fn expected_order_statistic(i: usize, lambda: usize) -> f64 {
    let p = (i as f64 - 0.375) / (lambda as f64 + 0.25);
    Normal::standard().inverse_cdf(p)
}

/// Normalized step-size maximizing quality gain on the sphere for weighted
/// recombination with `lambda` offspring, `mu_w * sum_i w_i * (-E[N_{i:lambda}])`.
pub fn optimal_normalized_step(lambda: usize) -> Result<f64> {
    let w = compute_weights(lambda)?;
    let c: f64 =
        w.w.iter()
            .enumerate()
            .map(|(k, wi)| -wi * expected_order_statistic(k + 1, lambda))
            .sum();
    Ok(w.mu_w * c)
}

/// CMA-ES with population-size adaptation.
#[derive(Debug, Clone)]
pub struct PsaCmaEs {
    params: GaussianParams,
    state: CmaState,
    psa: PsaState,
    config: PsaConfig,
    setups: HashMap<usize, (RecombinationWeights, CmaHyperparams, f64)>,
}

impl PsaCmaEs {
    pub fn new(params: GaussianParams, config: PsaConfig) -> Result<Self> {
        let d = params.dim();
        Ok(Self {
            state: CmaState::new(d),
            psa: PsaState::new(d, &config)?,
            params,
            config,
            setups: HashMap::new(),
        })
    }

    pub fn psa_state(&self) -> &PsaState {
        &self.psa
    }

    fn setup(&mut self, lambda: usize, streams: &Streams) -> Result<(RecombinationWeights, CmaHyperparams, f64)> {
        if let Some(s) = self.setups.get(&lambda) {
            return Ok(s.clone());
        }
        let d = self.params.dim();
        let weights = compute_weights(lambda)?;
        let hyper = CmaHyperparams::recommended(d, lambda, &weights);
        hyper.validate()?;
        let unit = GaussianParams::isotropic(DVector::zeros(d), 1.0)?;
        let mut rng = streams.derive(lambda as u64).rng(0, Purpose::MonteCarlo);
        let norm = normalization_factor(&unit, &hyper, &weights, self.config.n_mc, &mut rng)?;
        let s = (weights, hyper, norm);
        self.setups.insert(lambda, s.clone());
        Ok(s)
    }
}

impl Optimizer for PsaCmaEs {
    fn name(&self) -> &'static str {
        "psa"
    }

    fn params(&self) -> &GaussianParams {
        &self.params
    }

    fn iteration(&self) -> u64 {
        self.state.t
    }

    fn step(&mut self, objective: &mut dyn Objective, streams: &Streams) -> Result<IterationLog> {
        let t = self.state.t;
        let lambda = stochastic_round(self.psa.lambda_real, &mut streams.rng(t, Purpose::Rounding))
            .clamp(self.psa.lambda_min, self.psa.lambda_max);
        let (weights, hyper, norm) = self.setup(lambda, streams)?;
        let pop = sample_population(&self.params, lambda, &mut streams.rng(t, Purpose::Sampling))?;
        let batch = evaluate_batch(objective, &pop.x, 1, &mut streams.rng(t, Purpose::Noise))?;
        let ranking = rank_indices(&batch.means())?;
        let (outcome, state) = step(&self.params, &self.state, &hyper, &weights, &pop, &ranking)?;
        let joint = joint_direction(&self.params, &outcome.delta_m, &outcome.delta_sigma)?;

        let old_lambda = self.psa.lambda_real;
        self.psa = psa_update(&self.psa, &joint, norm)?;
        let mut params = outcome.params()?;
        if self.config.step_size_correction {
            let before = old_lambda.round() as usize;
            let after = self.psa.lambda_real.round() as usize;
            if before != after {
                let ratio = optimal_normalized_step(after)? / optimal_normalized_step(before)?;
                params = params.with_sigma(params.sigma() * ratio)?;
            }
        }
        self.params = params;
        self.state = state;
        Ok(IterationLog::basic(batch.evaluations(), lambda, self.params.sigma()))
    }
}
