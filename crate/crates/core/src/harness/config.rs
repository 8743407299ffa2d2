use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemKey;
use crate::strategy::{StrategyConfig, StrategyKind};

use super::ecdf::FINAL_TARGET;

/// Environment variable that overrides the default output directory.
pub const OUTPUT_ENV: &str = "NOISY_CMAES_OUT";

/// `10^6 d` noisy evaluations.
pub fn default_budget(d: usize) -> u64 {
    1_000_000 * d as u64
}

/// Explicit path, else `$NOISY_CMAES_OUT`, else `results`.
pub fn resolve_output_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| {
            std::env::var_os(OUTPUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// One strategy on one problem, repeated over independent trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    #[serde(with = "key_string")]
    pub problem: ProblemKey,
    pub budget: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Trials stop once `f(m)` reaches this value.
    #[serde(default = "default_stop")]
    pub stop_target: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub overrides: StrategyConfig,
}

fn default_trials() -> usize {
    20
}

fn default_stop() -> f64 {
    FINAL_TARGET
}

mod key_string {
    use super::ProblemKey;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &ProblemKey, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(k)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ProblemKey, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentConfig {
    pub fn new(strategy: StrategyKind, problem: ProblemKey) -> Self {
        Self {
            strategy,
            budget: default_budget(problem.dim),
            problem,
            trials: default_trials(),
            seed: 0,
            stop_target: FINAL_TARGET,
            output: None,
            overrides: StrategyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if !(self.stop_target.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "stop target must be finite, got {}",
                self.stop_target
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
