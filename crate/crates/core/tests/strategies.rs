use nalgebra::DVector;
use noisy_cmaes::problems::{initial_params, FunctionKind, NoiseKind, NoiseModel, NoisyProblem, Objective};
use noisy_cmaes::rng::Streams;
use noisy_cmaes::strategy::{build, StrategyConfig, StrategyKind};
use rand_chacha::ChaCha8Rng;

/// Counts calls independently of the wrapped problem's own counter.
struct Counting {
    inner: NoisyProblem,
    calls: u64,
}

impl Objective for Counting {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn evaluate(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
        self.calls += 1;
        self.inner.evaluate(x, rng)
    }
    fn clean_value(&self, x: &DVector<f64>) -> f64 {
        self.inner.clean_value(x)
    }
    fn evaluations(&self) -> u64 {
        self.calls
    }
}

fn problem(noise: NoiseKind, sigma_n: f64) -> Counting {
    let inner = NoisyProblem::with_initial(FunctionKind::Sphere, 6, NoiseModel::new(noise, sigma_n).unwrap()).unwrap();
    Counting { inner, calls: 0 }
}

#[test]
fn logged_evaluations_match_objective_calls() {
    for kind in StrategyKind::ALL {
        for (noise, s) in [
            (NoiseKind::None, 0.0),
            (NoiseKind::MultGaussian, 1.0),
            (NoiseKind::AddGaussian, 1.0),
        ] {
            let mut f = problem(noise, s);
            let params = initial_params(FunctionKind::Sphere, 6).unwrap();
            let mut opt = build(kind, params, &StrategyConfig::default()).unwrap();
            let streams = Streams::new(17);
            for _ in 0..60 {
                let before = f.calls;
                let log = opt.step(&mut f, &streams).unwrap();
                assert_eq!(log.evaluations, f.calls - before, "{kind} {noise}");
                assert!(log.evaluations >= log.lambda as u64);
                assert!(opt.params().sigma() > 0.0 && opt.params().sigma().is_finite());
            }
            assert_eq!(opt.iteration(), 60);
        }
    }
}

#[test]
fn strategies_are_reproducible_per_seed() {
    for kind in StrategyKind::ALL {
        let run = |seed: u64| {
            let mut f = problem(NoiseKind::MultUniform, 2.0);
            let mut opt = build(
                kind,
                initial_params(FunctionKind::Sphere, 6).unwrap(),
                &StrategyConfig::default(),
            )
            .unwrap();
            let streams = Streams::new(seed);
            for _ in 0..40 {
                opt.step(&mut f, &streams).unwrap();
            }
            (opt.params().mean().clone(), opt.params().sigma(), f.calls)
        };
        assert_eq!(run(3), run(3), "{kind}");
        assert_ne!(run(3).0, run(4).0, "{kind}");
    }
}

#[test]
fn every_strategy_makes_progress_without_noise() {
    for kind in StrategyKind::ALL {
        let mut f = problem(NoiseKind::None, 0.0);
        let params = initial_params(FunctionKind::Sphere, 6).unwrap();
        let f0 = f.clean_value(params.mean());
        let mut opt = build(kind, params, &StrategyConfig::default()).unwrap();
        let streams = Streams::new(5);
        for _ in 0..300 {
            opt.step(&mut f, &streams).unwrap();
        }
        let f1 = f.clean_value(opt.params().mean());
        assert!(f1 < 1e-6 * f0, "{kind}: {f0} -> {f1}");
    }
}
