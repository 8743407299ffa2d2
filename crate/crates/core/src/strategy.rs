//! The common optimizer interface and strategy selection by name.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cma::CmaEs;
use crate::distribution::GaussianParams;
use crate::error::{Error, Result};
use crate::lra::{LraCmaEs, LraConfig};
use crate::problems::Objective;
use crate::psa::{PsaCmaEs, PsaConfig};
use crate::ra::{RaCmaEs, RaConfig};
use crate::rng::Streams;
use crate::uh::{UhCmaEs, UhConfig};

/// Diagnostics of one iteration. Fields a strategy does not have are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// Noisy evaluations spent in this iteration.
    pub evaluations: u64,
    pub lambda: usize,
    pub sigma: f64,
    pub n_eval: Option<f64>,
    pub n_eval_used: Option<usize>,
    pub eta_m: Option<f64>,
    pub eta_sigma: Option<f64>,
    pub rho_m: Option<f64>,
    pub rho_sigma: Option<f64>,
    pub rho_target: Option<f64>,
    /// Uncertainty level of rank-change based noise handling.
    pub uncertainty: Option<f64>,
}

impl IterationLog {
    pub fn basic(evaluations: u64, lambda: usize, sigma: f64) -> Self {
        Self {
            evaluations,
            lambda,
            sigma,
            n_eval: None,
            n_eval_used: None,
            eta_m: None,
            eta_sigma: None,
            rho_m: None,
            rho_sigma: None,
            rho_target: None,
            uncertainty: None,
        }
    }
}

pub trait Optimizer {
    fn name(&self) -> &'static str;
    fn params(&self) -> &GaussianParams;
    /// Completed iterations.
    fn iteration(&self) -> u64;
    /// Runs one iteration, drawing all randomness from `streams` keyed by
    /// the current iteration.
    fn step(&mut self, objective: &mut dyn Objective, streams: &Streams) -> Result<IterationLog>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Cmaes,
    Ra,
    Uh,
    Psa,
    Lra,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Cmaes,
        StrategyKind::Ra,
        StrategyKind::Uh,
        StrategyKind::Psa,
        StrategyKind::Lra,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Cmaes => "cmaes",
            StrategyKind::Ra => "ra",
            StrategyKind::Uh => "uh",
            StrategyKind::Psa => "psa",
            StrategyKind::Lra => "lra",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let s = s
            .strip_suffix("-cma-es")
            .or_else(|| s.strip_suffix("-cmaes"))
            .unwrap_or(&s);
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "cma-es" && *k == StrategyKind::Cmaes))
            .ok_or_else(|| Error::UnknownKey(s.to_string()))
    }
}

/// Strategy-specific settings; every field has a default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Population size for the fixed-size strategies.
    pub lambda: Option<usize>,
    pub lra: LraConfig,
    pub ra: RaConfig,
    pub uh: UhConfig,
    pub psa: PsaConfig,
}

/// Builds an optimizer of `kind` starting from `params`.
pub fn build(kind: StrategyKind, params: GaussianParams, config: &StrategyConfig) -> Result<Box<dyn Optimizer + Send>> {
    Ok(match kind {
        StrategyKind::Cmaes => Box::new(CmaEs::new(params, config.lambda)?),
        StrategyKind::Ra => Box::new(RaCmaEs::new(params, config.lambda, config.ra)?),
        StrategyKind::Uh => Box::new(UhCmaEs::new(params, config.lambda, config.uh)?),
        StrategyKind::Psa => Box::new(PsaCmaEs::new(params, config.psa)?),
        StrategyKind::Lra => Box::new(LraCmaEs::new(params, config.lambda, config.lra)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.to_string().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("RA-CMA-ES".parse::<StrategyKind>().unwrap(), StrategyKind::Ra);
        assert!("nes".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn build_every_kind() {
        let p = GaussianParams::isotropic(DVector::zeros(3), 1.0).unwrap();
        for k in StrategyKind::ALL {
            let opt = build(k, p.clone(), &StrategyConfig::default()).unwrap();
            assert_eq!(opt.name(), k.name());
            assert_eq!(opt.iteration(), 0);
        }
    }

    #[test]
    fn config_parses_partial_json() {
        let c: StrategyConfig = serde_json::from_str(r#"{"ra": {"n_min": 1.5, "metric": "fisher"}}"#).unwrap();
        assert_eq!(c.ra.n_min, 1.5);
        assert_eq!(c.ra.rho_base, 0.8);
        assert_eq!(c.lra, LraConfig::default());
    }
}
