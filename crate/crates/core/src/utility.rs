//! Quantile-based utilities of ranking-based optimizers under noise.
//!
//! A selection scheme `w` maps a quantile in `[0, 1]` to a utility. With ties
//! the utility is the mean of `w` over `[q_lt, q_le]`. The noise-dependent
//! utility `v` takes quantiles over solutions and noise jointly; the
//! noise-independent utility `u` takes them over solutions only, comparing
//! expected objective values. This module provides both, and Monte-Carlo
//! checks of three properties: `v` can prefer a non-optimal solution under
//! multiplicative noise, `v` keeps the optimum under additive Gaussian noise,
//! and `u` always keeps the optimum.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distribution::compute_weights;
use crate::error::{Error, Result};
use crate::problems::{eval_clean, FunctionKind};
use crate::rng::{Purpose, Streams};

/// A non-increasing `w` on `[0, 1]` with a closed-form antiderivative.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionScheme {
    /// `lambda * w_i` on `[(i-1)/lambda, i/lambda)` for `i <= mu`, zero beyond,
    /// with the log-linear recombination weights `w_i`.
    Truncation { lambda: usize, levels: Vec<f64> },
    /// `(1 - q)^2`.
    Convex,
    /// `1 - q^2`.
    Concave,
    /// `1 - q`.
    Linear,
}

impl SelectionScheme {
    pub fn truncation(lambda: usize) -> Result<Self> {
        let w = compute_weights(lambda)?;
        Ok(SelectionScheme::Truncation {
            lambda,
            levels: w.w.iter().map(|wi| wi * lambda as f64).collect(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionScheme::Truncation { .. } => "truncation",
            SelectionScheme::Convex => "convex",
            SelectionScheme::Concave => "concave",
            SelectionScheme::Linear => "linear",
        }
    }

    pub fn w(&self, q: f64) -> f64 {
        match self {
            SelectionScheme::Truncation { lambda, levels } => {
                let i = (q * *lambda as f64).floor() as usize;
                levels.get(i).copied().unwrap_or(0.0)
            }
            SelectionScheme::Convex => (1.0 - q).powi(2),
            SelectionScheme::Concave => 1.0 - q * q,
            SelectionScheme::Linear => 1.0 - q,
        }
    }

    /// `W(q) = int_0^q w`.
    pub fn antiderivative(&self, q: f64) -> f64 {
        match self {
            SelectionScheme::Truncation { lambda, levels } => {
                let width = 1.0 / *lambda as f64;
                let mut total = 0.0;
                for (i, level) in levels.iter().enumerate() {
                    let lo = i as f64 * width;
                    if q <= lo {
                        break;
                    }
                    total += level * (q.min(lo + width) - lo);
                }
                total
            }
            SelectionScheme::Convex => (1.0 - (1.0 - q).powi(3)) / 3.0,
            SelectionScheme::Concave => q - q.powi(3) / 3.0,
            SelectionScheme::Linear => q - q * q / 2.0,
        }
    }

    /// `int_0^1 w`.
    pub fn integral(&self) -> f64 {
        self.antiderivative(1.0)
    }
}

/// Fractions of values strictly below and not above a reference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub q_lt: f64,
    pub q_le: f64,
}

impl QuantilePair {
    pub fn new(q_lt: f64, q_le: f64) -> Result<Self> {
        if !(0.0 <= q_lt && q_lt <= q_le && q_le <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= q_lt <= q_le <= 1, got ({q_lt}, {q_le})"
            )));
        }
        Ok(Self { q_lt, q_le })
    }
}

fn counting_quantiles(values: &[f64], reference: f64) -> Result<QuantilePair> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty population".into()));
    }
    if reference.is_nan() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidEvaluation("NaN in quantile estimate".into()));
    }
    let n = values.len() as f64;
    let lt = values.iter().filter(|&&v| v < reference).count() as f64;
    let le = values.iter().filter(|&&v| v <= reference).count() as f64;
    Ok(QuantilePair {
        q_lt: lt / n,
        q_le: le / n,
    })
}

/// Estimated quantiles of the noisy value `values[i]` within `values`.
pub fn estimated_quantiles_dependent(values: &[f64], i: usize) -> Result<QuantilePair> {
    let r = *values
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range")))?;
    counting_quantiles(values, r)
}

/// Estimated quantiles of the averaged value `avg_values[i]` within `avg_values`.
pub fn estimated_quantiles_independent(avg_values: &[f64], i: usize) -> Result<QuantilePair> {
    estimated_quantiles_dependent(avg_values, i)
}

/// `w(q_lt)` without ties, otherwise the mean of `w` over `[q_lt, q_le]`.
pub fn utility_from_quantiles(q: QuantilePair, scheme: &SelectionScheme) -> f64 {
    let width = q.q_le - q.q_lt;
    if width == 0.0 {
        scheme.w(q.q_lt)
    } else if width < 1e-6 {
        scheme.w(q.q_lt + 0.5 * width)
    } else {
        (scheme.antiderivative(q.q_le) - scheme.antiderivative(q.q_lt)) / (q.q_le - q.q_lt)
    }
}

/// The two-valued noise constructions with `f(x, z) = z f_x(x) + b`,
/// `z in {-1, 1}` and `Pr(z = 1) = p_plus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterexampleCase {
    /// `f_x = 0` at the optimum and `1` elsewhere.
    Convex,
    /// `f_x = -1` at the optimum and `0` elsewhere.
    Concave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub case: CounterexampleCase,
    pub p_plus: f64,
}

impl Construction {
    pub fn new(case: CounterexampleCase, p_plus: f64) -> Result<Self> {
        if !(p_plus > 0.5 && p_plus < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "noise must have positive mean and both signs, got Pr(z = 1) = {p_plus}"
            )));
        }
        Ok(Self { case, p_plus })
    }

    pub fn p_minus(&self) -> f64 {
        1.0 - self.p_plus
    }

    /// Exact quantiles of `f(x, z)` when competing solutions are almost
    /// surely different from the optimum.
    pub fn quantiles(&self, at_optimum: bool, z_plus: bool) -> QuantilePair {
        let pm = self.p_minus();
        let (lt, le) = match (self.case, at_optimum, z_plus) {
            (CounterexampleCase::Convex, true, _) => (pm, pm),
            (CounterexampleCase::Convex, false, false) => (0.0, pm),
            (CounterexampleCase::Convex, false, true) => (pm, 1.0),
            (CounterexampleCase::Concave, true, true) => (0.0, 0.0),
            (CounterexampleCase::Concave, true, false) => (1.0, 1.0),
            (CounterexampleCase::Concave, false, _) => (0.0, 1.0),
        };
        QuantilePair { q_lt: lt, q_le: le }
    }

    /// Closed-form `E_z[v]` at the optimum or elsewhere.
    pub fn expected_utility(&self, scheme: &SelectionScheme, at_optimum: bool) -> f64 {
        let plus = utility_from_quantiles(self.quantiles(at_optimum, true), scheme);
        let minus = utility_from_quantiles(self.quantiles(at_optimum, false), scheme);
        self.p_plus * plus + self.p_minus() * minus
    }
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

fn estimate(samples: impl Iterator<Item = f64>) -> Estimate {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in samples {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    Estimate {
        mean,
        se: (var / n).sqrt(),
    }
}

/// Monte-Carlo estimate of `E_z[v(x, z)]` for `construction`.
pub fn mc_expected_dependent_utility(
    construction: &Construction,
    scheme: &SelectionScheme,
    at_optimum: bool,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Estimate> {
    if samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10^4 samples, got {samples}"
        )));
    }
    let plus = utility_from_quantiles(construction.quantiles(at_optimum, true), scheme);
    let minus = utility_from_quantiles(construction.quantiles(at_optimum, false), scheme);
    Ok(estimate((0..samples).map(|_| {
        if rng.random::<f64>() < construction.p_plus {
            plus
        } else {
            minus
        }
    })))
}

/// Noise-dependent utility of candidate `f` on a finite candidate set with
/// additive Gaussian noise, competitors drawn uniformly from `candidates`:
/// `q(f + sigma z) = mean_k Phi((f + sigma z - f_k) / sigma)`.
pub fn additive_dependent_utility(candidates: &[f64], sigma_n: f64, noisy: f64, scheme: &SelectionScheme) -> f64 {
    let phi = Normal::standard();
    let q = candidates.iter().map(|fk| phi.cdf((noisy - fk) / sigma_n)).sum::<f64>() / candidates.len() as f64;
    scheme.w(q)
}

/// Noise-independent utility of `fx` against a sample of competitor values.
pub fn independent_utility(competitors: &[f64], fx: f64, scheme: &SelectionScheme) -> Result<f64> {
    Ok(utility_from_quantiles(counting_quantiles(competitors, fx)?, scheme))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LemmaConfig {
    pub seed: u64,
    /// Draws for the two-valued noise constructions.
    pub counterexample_samples: usize,
    /// Draws per candidate for the additive-noise check.
    pub additive_samples: usize,
    /// Competitors sampled per benchmark for the noise-independent check.
    pub independent_samples: usize,
    pub dim: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            counterexample_samples: 1_000_000,
            additive_samples: 1_000_000,
            independent_samples: 2_000,
            dim: 10,
        }
    }
}

/// One inequality `lhs > rhs` (or an agreement check), with its evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `name,lhs,rhs,margin,se,status` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,lhs,rhs,margin,se,status\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                c.lhs,
                c.rhs,
                c.margin,
                c.se,
                if c.pass { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn agreement(name: String, mc: Estimate, exact: f64) -> LemmaCheck {
    let diff = (mc.mean - exact).abs();
    LemmaCheck {
        name,
        lhs: mc.mean,
        rhs: exact,
        margin: diff,
        se: mc.se,
        pass: diff <= 3.0 * mc.se + 1e-12,
    }
}

fn strictly_greater(name: String, lhs: f64, rhs: f64, se: f64) -> LemmaCheck {
    LemmaCheck {
        name,
        lhs,
        rhs,
        margin: lhs - rhs,
        se,
        pass: lhs - rhs > 3.0 * se && lhs > rhs,
    }
}

/// The noise-dependent utility prefers a non-optimal solution under the
/// two-valued multiplicative constructions (convex and concave schemes).
pub fn check_counterexamples(config: &LemmaConfig) -> Result<Vec<LemmaCheck>> {
    let streams = Streams::new(config.seed);
    let cases = [
        (
            "convex",
            Construction::new(CounterexampleCase::Convex, 0.55)?,
            SelectionScheme::Convex,
        ),
        (
            "concave",
            Construction::new(CounterexampleCase::Concave, 0.6)?,
            SelectionScheme::Concave,
        ),
    ];
    let mut out = Vec::new();
    for (k, (label, construction, scheme)) in cases.into_iter().enumerate() {
        let exact_opt = construction.expected_utility(&scheme, true);
        let exact_other = construction.expected_utility(&scheme, false);
        let mut rng = streams.derive(k as u64).rng(0, Purpose::MonteCarlo);
        let mc_opt =
            mc_expected_dependent_utility(&construction, &scheme, true, config.counterexample_samples, &mut rng)?;
        let mc_other =
            mc_expected_dependent_utility(&construction, &scheme, false, config.counterexample_samples, &mut rng)?;
        out.push(strictly_greater(
            format!("multiplicative-{label}-closed-form"),
            exact_other,
            exact_opt,
            0.0,
        ));
        out.push(agreement(
            format!("multiplicative-{label}-mc-optimum"),
            mc_opt,
            exact_opt,
        ));
        out.push(agreement(
            format!("multiplicative-{label}-mc-other"),
            mc_other,
            exact_other,
        ));
        let se = (mc_opt.se.powi(2) + mc_other.se.powi(2)).sqrt();
        out.push(strictly_greater(
            format!("multiplicative-{label}-mc-gap"),
            mc_other.mean,
            mc_opt.mean,
            se,
        ));
    }
    Ok(out)
}

/// Under additive Gaussian noise on candidates `{0, 1, 2}` the expected
/// noise-dependent utility is ordered like the objective values.
pub fn check_additive_ordering(config: &LemmaConfig) -> Result<Vec<LemmaCheck>> {
    let candidates = [0.0, 1.0, 2.0];
    let sigma_n = 1.0;
    let streams = Streams::new(config.seed).derive(100);
    let mut out = Vec::new();
    for scheme in [
        SelectionScheme::Linear,
        SelectionScheme::Convex,
        SelectionScheme::Concave,
    ] {
        let mut rng = streams.derive(out.len() as u64).rng(0, Purpose::MonteCarlo);
        // Common noise draws for all candidates; the paired differences carry the error.
        let mut diffs = [Vec::new(), Vec::new()];
        let mut means = [0.0; 3];
        for _ in 0..config.additive_samples {
            let z: f64 = rng.sample(StandardNormal);
            let v: Vec<f64> = candidates
                .iter()
                .map(|f| additive_dependent_utility(&candidates, sigma_n, f + sigma_n * z, &scheme))
                .collect();
            for (m, x) in means.iter_mut().zip(&v) {
                *m += x;
            }
            diffs[0].push(v[0] - v[1]);
            diffs[1].push(v[1] - v[2]);
        }
        let n = config.additive_samples as f64;
        for (k, d) in diffs.iter().enumerate() {
            // Decided on the paired difference, which shares the noise draws.
            let e = estimate(d.iter().copied());
            out.push(LemmaCheck {
                name: format!("additive-{}-f{}-over-f{}", scheme.name(), k, k + 1),
                lhs: means[k] / n,
                rhs: means[k + 1] / n,
                margin: e.mean,
                se: e.se,
                pass: e.mean > 3.0 * e.se,
            });
        }
    }
    Ok(out)
}

/// The noise-independent utility of the unique optimum is `w(0)`, the
/// maximum, for every benchmark and every sampled competitor.
pub fn check_independent_optimum(config: &LemmaConfig) -> Result<Vec<LemmaCheck>> {
    let streams = Streams::new(config.seed).derive(200);
    let scheme = SelectionScheme::Linear;
    let mut out = Vec::new();
    for (k, kind) in FunctionKind::ALL.into_iter().enumerate() {
        let f = crate::problems::BenchmarkFunction::new(kind, config.dim.max(kind.min_dim()))?;
        let opt = f.optimum();
        let f_opt = f.eval(&opt)?;
        let (m0, s0) = kind.initial_point();
        let mut rng = streams.derive(k as u64).rng(0, Purpose::MonteCarlo);
        let xs: Vec<DVector<f64>> = (0..config.independent_samples)
            .map(|_| DVector::from_fn(f.dim, |_, _| m0 + s0 * rng.sample::<f64, _>(StandardNormal)))
            .filter(|x| x != &opt)
            .collect();
        let values: Vec<f64> = xs.iter().map(|x| eval_clean(kind, x.as_slice())).collect();
        let u_opt = independent_utility(&values, f_opt, &scheme)?;
        let mut best_other = f64::NEG_INFINITY;
        for v in &values {
            best_other = best_other.max(independent_utility(&values, *v, &scheme)?);
        }
        let q = counting_quantiles(&values, f_opt)?;
        out.push(LemmaCheck {
            name: format!("independent-optimum-{kind}"),
            lhs: u_opt,
            rhs: best_other,
            margin: u_opt - best_other,
            se: 0.0,
            pass: q.q_lt == 0.0 && q.q_le == 0.0 && u_opt == scheme.w(0.0) && u_opt >= best_other,
        });
    }
    Ok(out)
}

pub fn lemma_checks(config: &LemmaConfig) -> Result<LemmaReport> {
    let mut checks = check_counterexamples(config)?;
    checks.extend(check_additive_ordering(config)?);
    checks.extend(check_independent_optimum(config)?);
    Ok(LemmaReport { checks })
}
