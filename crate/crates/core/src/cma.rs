//! One iteration of the baseline CMA-ES with positive recombination weights,
//! cumulative step-size adaptation and rank-one plus rank-mu covariance update.
//!
//! [`step`] is a pure function of its inputs so that noise-handling variants
//! can compute several candidate updates from the same state (for example
//! from different rankings of one population) and keep only one of them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distribution::{
    compute_weights, expected_chi_norm, sample_population, GaussianParams, RecombinationWeights, SampledPopulation,
};
use crate::error::{check_dim, Error, Result};
use crate::problems::{evaluate_batch, Objective};
use crate::rng::{Purpose, Streams};
use crate::strategy::{IterationLog, Optimizer};

/// Learning rates, damping and population size of CMA-ES.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmaHyperparams {
    pub c_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub c_m: f64,
    pub d_sigma: f64,
    pub lambda: usize,
}

impl CmaHyperparams {
    /// Recommended defaults for dimension `d` and the given weights:
    ///
    /// ```text
    /// c_sigma = (mu_w + 2) / (d + mu_w + 5)
    /// d_sigma = 1 + 2 max(0, sqrt((mu_w - 1) / (d + 1)) - 1) + c_sigma
    /// c_c     = (4 + mu_w / d) / (d + 4 + 2 mu_w / d)
    /// c_1     = 2 / ((d + 1.3)^2 + mu_w)
    /// c_mu    = min(1 - c_1, 2 (mu_w - 2 + 1 / mu_w) / ((d + 2)^2 + mu_w))
    /// c_m     = 1
    /// ```
    pub fn recommended(d: usize, lambda: usize, weights: &RecombinationWeights) -> Self {
        let n = d as f64;
        let mu_w = weights.mu_w;
        let c_sigma = (mu_w + 2.0) / (n + mu_w + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_w - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_w / n) / (n + 4.0 + 2.0 * mu_w / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_w);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_w - 2.0 + 1.0 / mu_w) / ((n + 2.0).powi(2) + mu_w));
        Self {
            c_sigma,
            c_c,
            c_1,
            c_mu,
            c_m: 1.0,
            d_sigma,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c_sigma > 0.0
            && self.c_sigma <= 1.0
            && self.c_c > 0.0
            && self.c_c <= 1.0
            && self.c_1 >= 0.0
            && self.c_mu >= 0.0
            && self.c_1 + self.c_mu <= 1.0 + 1e-15
            && self.c_m > 0.0
            && self.c_m <= 1.0
            && self.d_sigma > 0.0
            && self.lambda >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "inconsistent CMA hyperparameters {self:?}"
            )))
        }
    }
}

/// `4 + floor(3 ln d)`.
pub fn default_lambda(d: usize) -> usize {
    4 + (3.0 * (d.max(1) as f64).ln()).floor() as usize
}

/// Evolution paths and iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub t: u64,
}

impl CmaState {
    pub fn new(d: usize) -> Self {
        Self {
            p_sigma: DVector::zeros(d),
            p_c: DVector::zeros(d),
            t: 0,
        }
    }
}

/// Result of one CMA-ES update: the updated ("ori") parameters in raw form
/// and the differences from the current ones.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    /// `m_ori - m`.
    pub delta_m: DVector<f64>,
    /// `sigma_ori^2 C_ori - sigma^2 C`.
    pub delta_sigma: DMatrix<f64>,
    pub delta_z: DVector<f64>,
    pub delta_y: DVector<f64>,
    pub h_sigma: u8,
}

impl StepOutcome {
    /// Decomposes the updated covariance; fails if it lost positive definiteness.
    pub fn params(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.mean.clone(), self.sigma, self.cov.clone())
    }
}

/// Indices sorted by ascending fitness; ties keep sampling order.
pub fn rank_indices(fitness: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = fitness.iter().position(|f| f.is_nan()) {
        return Err(Error::InvalidEvaluation(format!("fitness of solution {i} is NaN")));
    }
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).expect("NaN filtered above"));
    Ok(idx)
}

/// `(sum w_i z_{i:lambda}, sum w_i y_{i:lambda})` over the `mu` best.
pub fn weighted_directions(
    weights: &RecombinationWeights,
    z_ranked: &[&DVector<f64>],
    y_ranked: &[&DVector<f64>],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mu = weights.mu();
    if z_ranked.len() < mu || y_ranked.len() < mu || z_ranked.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need at least mu = {mu} ranked solutions, got {}",
            z_ranked.len().min(y_ranked.len())
        )));
    }
    let d = z_ranked[0].len();
    let mut dz = DVector::zeros(d);
    let mut dy = DVector::zeros(d);
    for (i, w) in weights.w.iter().enumerate() {
        dz.axpy(*w, z_ranked[i], 1.0);
        dy.axpy(*w, y_ranked[i], 1.0);
    }
    Ok((dz, dy))
}

/// One CMA-ES update of `(m, sigma, C)` and the evolution paths given the
/// ranking (best first) of `population`.
pub fn step(
    params: &GaussianParams,
    state: &CmaState,
    hyper: &CmaHyperparams,
    weights: &RecombinationWeights,
    population: &SampledPopulation,
    ranking: &[usize],
) -> Result<(StepOutcome, CmaState)> {
    let d = params.dim();
    check_dim(population.len(), ranking.len())?;
    check_dim(d, state.p_sigma.len())?;
    let z_ranked: Vec<&DVector<f64>> = ranking.iter().map(|&i| &population.z[i]).collect();
    let y_ranked: Vec<&DVector<f64>> = ranking.iter().map(|&i| &population.y[i]).collect();
    let (delta_z, delta_y) = weighted_directions(weights, &z_ranked, &y_ranked)?;
    let mu_w = weights.mu_w;
    let n = d as f64;

    let cs = hyper.c_sigma;
    let p_sigma = &state.p_sigma * (1.0 - cs) + &delta_z * (cs * (2.0 - cs) * mu_w).sqrt();

    let t1 = (state.t + 1) as f64;
    let norm_ratio = p_sigma.norm_squared() / (1.0 - (1.0 - cs).powf(2.0 * t1));
    let h_sigma: u8 = if norm_ratio < (2.0 + 4.0 / (n + 1.0)) * n { 1 } else { 0 };
    let h = f64::from(h_sigma);

    let cc = hyper.c_c;
    let p_c = &state.p_c * (1.0 - cc) + &delta_y * (h * (cc * (2.0 - cc) * mu_w).sqrt());

    let sigma = params.sigma();
    let mean = params.mean() + &delta_y * (hyper.c_m * sigma);
    let new_sigma = sigma * ((cs / hyper.d_sigma) * (p_sigma.norm() / expected_chi_norm(d) - 1.0)).exp();

    let delta = (1.0 - h) * cc * (2.0 - cc);
    let c = params.cov();
    let mut rank_mu = DMatrix::zeros(d, d);
    for (w, y) in weights.w.iter().zip(&y_ranked) {
        rank_mu.ger(*w, y, y, 1.0);
    }
    let total_w: f64 = weights.w.iter().sum();
    let decay = 1.0 + hyper.c_1 * delta - hyper.c_1 - hyper.c_mu * total_w;
    let mut cov = c * decay + &rank_mu * hyper.c_mu;
    cov.ger(hyper.c_1, &p_c, &p_c, 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;

    if !new_sigma.is_finite() || new_sigma <= 0.0 {
        return Err(Error::Degeneracy(format!("step-size update produced {new_sigma}")));
    }
    let delta_sigma = &cov * (new_sigma * new_sigma) - c * (sigma * sigma);
    let delta_sigma = (&delta_sigma + delta_sigma.transpose()) * 0.5;
    let delta_m = &mean - params.mean();

    Ok((
        StepOutcome {
            mean,
            sigma: new_sigma,
            cov,
            delta_m,
            delta_sigma,
            delta_z,
            delta_y,
            h_sigma,
        },
        CmaState {
            p_sigma,
            p_c,
            t: state.t + 1,
        },
    ))
}

/// Plain CMA-ES: one evaluation per solution, no noise handling.
#[derive(Debug, Clone)]
pub struct CmaEs {
    params: GaussianParams,
    state: CmaState,
    hyper: CmaHyperparams,
    weights: RecombinationWeights,
}

impl CmaEs {
    pub fn new(params: GaussianParams, lambda: Option<usize>) -> Result<Self> {
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
        })
    }

    pub fn hyper(&self) -> &CmaHyperparams {
        &self.hyper
    }
}

impl Optimizer for CmaEs {
    fn name(&self) -> &'static str {
        "cmaes"
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
        self.params = outcome.params()?;
        self.state = state;
        Ok(IterationLog::basic(batch.evaluations(), lambda, self.params.sigma()))
    }
}
