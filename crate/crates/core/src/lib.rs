//! CMA-ES variants for noisy black-box optimization.
//!
//! * [`cma`]: the baseline CMA-ES iteration.
//! * [`ra`]: reevaluation adaptation driven by the correlation of two
//!   half-sample update directions, combined with learning-rate adaptation.
//! * [`lra`], [`psa`], [`uh`]: learning-rate adaptation, population-size
//!   adaptation and uncertainty handling.
//! * [`problems`]: benchmark functions and noise models.
//! * [`utility`]: the ranking-based utilities and checks of their optimality
//!   properties under noise.
//! * [`harness`]: trial runner, ECDF and persistence.
//!
//! ```
//! use noisy_cmaes::problems::{FunctionKind, NoiseKind, NoiseModel, NoisyProblem};
//! use noisy_cmaes::strategy::{build, StrategyConfig, StrategyKind};
//! use noisy_cmaes::rng::Streams;
//!
//! let noise = NoiseModel::new(NoiseKind::AddGaussian, 1.0).unwrap();
//! let mut problem = NoisyProblem::with_initial(FunctionKind::Sphere, 5, noise).unwrap();
//! let mut opt = build(StrategyKind::Ra, problem.initial_params().unwrap(), &StrategyConfig::default()).unwrap();
//! let streams = Streams::new(42);
//! for _ in 0..50 {
//!     opt.step(&mut problem, &streams).unwrap();
//! }
//! assert!(opt.params().sigma() > 0.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cma;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod lra;
pub mod problems;
pub mod psa;
pub mod ra;
pub mod rng;
pub mod strategy;
pub mod uh;
pub mod utility;

pub use error::{Error, Result};
