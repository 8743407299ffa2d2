//! Benchmark functions, their initial search distributions, and the three
//! noise models (multiplicative Gaussian, multiplicative uniform, additive
//! Gaussian).

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distribution::GaussianParams;
use crate::error::{check_dim, Error, Result};

/// Something that can be evaluated with noise and, for logging, without.
pub trait Objective {
    fn dim(&self) -> usize;
    /// One noisy evaluation; counts toward the budget.
    fn evaluate(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64;
    /// Noiseless value; never counted.
    fn clean_value(&self, x: &DVector<f64>) -> f64;
    /// Number of noisy evaluations so far.
    fn evaluations(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Sphere,
    Ellipsoid,
    Rosenbrock,
    Ackley,
    Schaffer,
    Rastrigin,
    Bohachevsky,
    Griewank,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 8] = [
        FunctionKind::Sphere,
        FunctionKind::Ellipsoid,
        FunctionKind::Rosenbrock,
        FunctionKind::Ackley,
        FunctionKind::Schaffer,
        FunctionKind::Rastrigin,
        FunctionKind::Bohachevsky,
        FunctionKind::Griewank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Sphere => "sphere",
            FunctionKind::Ellipsoid => "ellipsoid",
            FunctionKind::Rosenbrock => "rosenbrock",
            FunctionKind::Ackley => "ackley",
            FunctionKind::Schaffer => "schaffer",
            FunctionKind::Rastrigin => "rastrigin",
            FunctionKind::Bohachevsky => "bohachevsky",
            FunctionKind::Griewank => "griewank",
        }
    }

    /// Smallest dimension the definition makes sense for.
    pub fn min_dim(self) -> usize {
        match self {
            FunctionKind::Rosenbrock | FunctionKind::Schaffer | FunctionKind::Bohachevsky => 2,
            _ => 1,
        }
    }

    /// Initial mean coordinate and step-size.
    pub fn initial_point(self) -> (f64, f64) {
        match self {
            FunctionKind::Sphere | FunctionKind::Ellipsoid | FunctionKind::Rastrigin => (3.0, 2.0),
            FunctionKind::Rosenbrock => (0.0, 0.1),
            FunctionKind::Ackley => (15.5, 14.5),
            FunctionKind::Schaffer => (55.0, 45.0),
            FunctionKind::Bohachevsky => (8.0, 7.0),
            FunctionKind::Griewank => (305.0, 295.0),
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FunctionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownKey(s.to_string()))
    }
}

/// A benchmark function fixed to a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkFunction {
    pub kind: FunctionKind,
    pub dim: usize,
}

impl BenchmarkFunction {
    pub fn new(kind: FunctionKind, dim: usize) -> Result<Self> {
        if dim < kind.min_dim() {
            return Err(Error::InvalidArgument(format!(
                "{kind} needs dimension >= {}, got {dim}",
                kind.min_dim()
            )));
        }
        Ok(Self { kind, dim })
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(eval_clean(self.kind, x.as_slice()))
    }

    /// The global minimizer.
    pub fn optimum(&self) -> DVector<f64> {
        match self.kind {
            FunctionKind::Rosenbrock => DVector::from_element(self.dim, 1.0),
            _ => DVector::zeros(self.dim),
        }
    }
}

/// Noiseless value of `kind` at `x` (dimension taken from `x`).
pub fn eval_clean(kind: FunctionKind, x: &[f64]) -> f64 {
    use std::f64::consts::{E, PI};
    let d = x.len();
    let n = d as f64;
    let pairs = || x.windows(2).map(|w| (w[0], w[1]));
    match kind {
        FunctionKind::Sphere => x.iter().map(|v| v * v).sum(),
        FunctionKind::Ellipsoid => x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let e = if d > 1 { i as f64 / (n - 1.0) } else { 0.0 };
                (1000f64.powf(e) * v).powi(2)
            })
            .sum(),
        FunctionKind::Rosenbrock => pairs()
            .map(|(a, b)| 100.0 * (b - a * a).powi(2) + (a - 1.0).powi(2))
            .sum(),
        FunctionKind::Ackley => {
            let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
            let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
            20.0 - 20.0 * (-0.2 * sq.sqrt()).exp() + E - cs.exp()
        }
        FunctionKind::Schaffer => pairs()
            .map(|(a, b)| {
                let s = a * a + b * b;
                s.powf(0.25) * ((50.0 * s.powf(0.1)).sin().powi(2) + 1.0)
            })
            .sum(),
        FunctionKind::Rastrigin => 10.0 * n + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>(),
        FunctionKind::Bohachevsky => pairs()
            .map(|(a, b)| a * a + 2.0 * b * b - 0.3 * (3.0 * PI * a).cos() - 0.4 * (4.0 * PI * b).cos() + 0.7)
            .sum(),
        FunctionKind::Griewank => {
            let s = x.iter().map(|v| v * v).sum::<f64>() / 4000.0;
            let p: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                .product();
            s - p + 1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "mult-gauss")]
    MultGaussian,
    #[serde(rename = "mult-uniform")]
    MultUniform,
    #[serde(rename = "add-gauss")]
    AddGaussian,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::MultGaussian => "mult-gauss",
            NoiseKind::MultUniform => "mult-uniform",
            NoiseKind::AddGaussian => "add-gauss",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "noiseless" => Ok(NoiseKind::None),
            "mult-gauss" | "mult-gaussian" => Ok(NoiseKind::MultGaussian),
            "mult-uniform" | "mult-uni" => Ok(NoiseKind::MultUniform),
            "add-gauss" | "add-gaussian" => Ok(NoiseKind::AddGaussian),
            _ => Err(Error::UnknownKey(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma_n: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma_n: f64) -> Result<Self> {
        if !(sigma_n >= 0.0) || !sigma_n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise strength must be >= 0, got {sigma_n}"
            )));
        }
        Ok(Self { kind, sigma_n })
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma_n: 0.0,
        }
    }

    /// Applies the noise to a clean value.
    pub fn apply(&self, clean: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self.kind {
            NoiseKind::None => clean,
            NoiseKind::MultGaussian => {
                let z: f64 = rng.sample(StandardNormal);
                clean * (1.0 + self.sigma_n * z)
            }
            NoiseKind::MultUniform => {
                let z: f64 = rng.random_range(-1.0..=1.0);
                clean * (1.0 + self.sigma_n * z)
            }
            NoiseKind::AddGaussian => {
                let z: f64 = rng.sample(StandardNormal);
                clean + self.sigma_n * z
            }
        }
    }
}

/// `"<function>:<d>:<noise-kind>:<sigma_n>"`, e.g. `sphere:10:mult-gauss:2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemKey {
    pub function: FunctionKind,
    pub dim: usize,
    pub noise: NoiseModel,
}

impl ProblemKey {
    /// Parses a full key, or a partial one (`sphere:10`, `sphere`) completed
    /// with the given defaults.
    pub fn parse_with_defaults(s: &str, dim: usize, noise: NoiseModel) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.is_empty() || parts.len() > 4 || parts[0].is_empty() {
            return Err(Error::UnknownKey(s.to_string()));
        }
        let function = parts[0].parse()?;
        let dim = match parts.get(1) {
            Some(p) => p.parse().map_err(|_| Error::UnknownKey(s.to_string()))?,
            None => dim,
        };
        let kind = match parts.get(2) {
            Some(p) => p.parse()?,
            None => noise.kind,
        };
        let sigma_n = match parts.get(3) {
            Some(p) => p.parse().map_err(|_| Error::UnknownKey(s.to_string()))?,
            None => noise.sigma_n,
        };
        let key = Self {
            function,
            dim,
            noise: NoiseModel::new(kind, sigma_n)?,
        };
        BenchmarkFunction::new(function, dim)?;
        Ok(key)
    }

    pub fn build(&self) -> Result<NoisyProblem> {
        NoisyProblem::with_initial(self.function, self.dim, self.noise)
    }
}

impl fmt::Display for ProblemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.function, self.dim, self.noise.kind, self.noise.sigma_n
        )
    }
}

impl FromStr for ProblemKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.split(':').count() != 4 {
            return Err(Error::UnknownKey(s.to_string()));
        }
        Self::parse_with_defaults(s, 0, NoiseModel::none())
    }
}

/// Initial mean, step-size and identity covariance for `kind` in dimension `d`.
pub fn initial_params(kind: FunctionKind, d: usize) -> Result<GaussianParams> {
    BenchmarkFunction::new(kind, d)?;
    let (m0, s0) = kind.initial_point();
    GaussianParams::isotropic(DVector::from_element(d, m0), s0)
}

/// Base function plus noise, with an evaluation counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyProblem {
    pub function: BenchmarkFunction,
    pub noise: NoiseModel,
    pub initial_mean: DVector<f64>,
    pub initial_sigma: f64,
    eval_counter: u64,
}

impl NoisyProblem {
    pub fn with_initial(kind: FunctionKind, d: usize, noise: NoiseModel) -> Result<Self> {
        let function = BenchmarkFunction::new(kind, d)?;
        let (m0, s0) = kind.initial_point();
        Ok(Self {
            function,
            noise,
            initial_mean: DVector::from_element(d, m0),
            initial_sigma: s0,
            eval_counter: 0,
        })
    }

    pub fn key(&self) -> ProblemKey {
        ProblemKey {
            function: self.function.kind,
            dim: self.function.dim,
            noise: self.noise,
        }
    }

    pub fn initial_params(&self) -> Result<GaussianParams> {
        GaussianParams::isotropic(self.initial_mean.clone(), self.initial_sigma)
    }

    /// Noisy evaluation; see [`Objective::evaluate`].
    pub fn eval_noisy(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
        let clean = self.function.eval(x)?;
        self.eval_counter += 1;
        Ok(self.noise.apply(clean, rng))
    }
}

impl Objective for NoisyProblem {
    fn dim(&self) -> usize {
        self.function.dim
    }

    fn evaluate(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
        self.eval_counter += 1;
        self.noise.apply(eval_clean(self.function.kind, x.as_slice()), rng)
    }

    fn clean_value(&self, x: &DVector<f64>) -> f64 {
        eval_clean(self.function.kind, x.as_slice())
    }

    fn evaluations(&self) -> u64 {
        self.eval_counter
    }
}

/// Raw values of `lambda` solutions, each evaluated `n` times.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationBatch {
    /// `raw[i][j]`: `j`-th evaluation of solution `i`.
    pub raw: Vec<Vec<f64>>,
}

impl EvaluationBatch {
    pub fn evaluations(&self) -> u64 {
        self.raw.iter().map(|r| r.len() as u64).sum()
    }

    /// Per-solution average over all its evaluations.
    pub fn means(&self) -> Vec<f64> {
        self.raw
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

/// Evaluates every solution `n` times, solution-major, from one noise stream.
pub fn evaluate_batch(
    objective: &mut dyn Objective,
    xs: &[DVector<f64>],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluationBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of evaluations must be >= 1".into()));
    }
    let mut raw = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        check_dim(objective.dim(), x.len())?;
        let row: Vec<f64> = (0..n).map(|_| objective.evaluate(x, rng)).collect();
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidEvaluation(format!(
                "objective returned NaN for solution {i}"
            )));
        }
        raw.push(row);
    }
    Ok(EvaluationBatch { raw })
}
