use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use noisy_cmaes::cma::default_lambda;
use noisy_cmaes::harness::{
    compute_ecdf, ecdf_checkpoints, generate_targets, read_experiment, resolve_output_dir, run_experiment,
    write_experiment, ExperimentConfig, ExperimentResult, SweepConfig, DEFAULT_TARGETS,
};
use noisy_cmaes::problems::{NoiseKind, NoiseModel, Objective, ProblemKey};
use noisy_cmaes::strategy::StrategyKind;
use noisy_cmaes::utility::{lemma_checks, LemmaConfig};

#[derive(Parser)]
#[command(name = "noisy-cmaes", version, about = "CMA-ES variants on noisy benchmark problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of one experiment; writes per-trial CSV, summary.json and ecdf.csv.
    Run(RunArgs),
    /// Run every strategy x problem x noise strength combination.
    Sweep(SweepArgs),
    /// Aggregate stored experiments into one ECDF table.
    Ecdf(EcdfArgs),
    /// Check the utility inequalities; exits non-zero if any fails.
    LemmaCheck(LemmaArgs),
}

#[derive(Args)]
struct Common {
    /// Evaluation budget per trial; accepts `1e6`. Defaults to 10^6 d.
    #[arg(long, value_parser = parse_count)]
    budget: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to $NOISY_CMAES_OUT, then `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON configuration file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for independent trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// `<function>[:<d>[:<noise>[:<sigma_n>]]]`.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    sigma_n: Option<f64>,
    #[arg(long)]
    stop_target: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated strategies; all by default.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<StrategyKind>,
    /// Comma-separated `<function>:<d>` entries.
    #[arg(long, value_delimiter = ',')]
    problem: Vec<String>,
    /// Comma-separated noise kinds; the three noisy ones by default.
    #[arg(long, value_delimiter = ',')]
    noise: Vec<NoiseKind>,
    /// Comma-separated noise strengths replacing the standard grid.
    #[arg(long, value_delimiter = ',')]
    sigma_n: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EcdfArgs {
    /// Experiment directories written by `run` or `sweep`.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TARGETS)]
    targets: usize,
    #[arg(long, default_value_t = 101)]
    checkpoints: usize,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo draws for the sampled checks.
    #[arg(long, value_parser = parse_count)]
    samples: Option<u64>,
    /// Also write the CSV report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("not a non-negative integer: {s}"));
    }
    Ok(v as u64)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn experiment_dir_name(c: &ExperimentConfig) -> String {
    format!("{}_{}", c.strategy, c.problem.to_string().replace(':', "_"))
}

fn report(dir: &Path, r: &ExperimentResult) {
    let s = &r.summary;
    let median = s
        .median_evals_to_target
        .map_or("inf".to_string(), |m| format!("{m:.0}"));
    println!(
        "{} {}: {}/{} trials reached {:e}, median evaluations {median} -> {}",
        s.config.strategy,
        s.config.problem,
        s.successes,
        s.trials.len(),
        s.config.stop_target,
        dir.display()
    );
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = match &args.common.config {
        Some(p) => read_json::<ExperimentConfig>(p)?,
        None => {
            let Some(strategy) = args.strategy else {
                bail!("--strategy is required without --config")
            };
            let Some(problem) = &args.problem else {
                bail!("--problem is required without --config")
            };
            let noise = NoiseModel::new(args.noise.unwrap_or(NoiseKind::None), args.sigma_n.unwrap_or(0.0))?;
            ExperimentConfig::new(strategy, ProblemKey::parse_with_defaults(problem, 10, noise)?)
        }
    };
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    if let Some(p) = &args.problem {
        let budget_was_default = config.budget == noisy_cmaes::harness::default_budget(config.problem.dim);
        config.problem = ProblemKey::parse_with_defaults(p, config.problem.dim, config.problem.noise)?;
        if budget_was_default {
            config.budget = noisy_cmaes::harness::default_budget(config.problem.dim);
        }
    }
    if args.noise.is_some() || args.sigma_n.is_some() {
        let n = config.problem.noise;
        config.problem.noise = NoiseModel::new(args.noise.unwrap_or(n.kind), args.sigma_n.unwrap_or(n.sigma_n))?;
    }
    if let Some(t) = args.stop_target {
        config.stop_target = t;
    }
    let c = &args.common;
    config.budget = c.budget.unwrap_or(config.budget);
    config.trials = c.trials.unwrap_or(config.trials);
    config.seed = c.seed.unwrap_or(config.seed);
    config.validate()?;
    let dir = resolve_output_dir(c.out.as_deref().or(config.output.as_deref()));
    let result = run_experiment(&config, c.jobs)?;
    write_experiment(&dir, &result)?;
    report(&dir, &result);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let c = &args.common;
    let mut sweep: SweepConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => SweepConfig::default(),
    };
    if !args.strategy.is_empty() {
        sweep.strategies = args.strategy.clone();
    }
    if !args.problem.is_empty() {
        sweep.problems = args.problem.clone();
    }
    if !args.noise.is_empty() {
        sweep.noise = args.noise.clone();
    }
    if !args.sigma_n.is_empty() {
        sweep.sigma_n = Some(args.sigma_n.clone());
    }
    sweep.budget = c.budget.or(sweep.budget);
    sweep.trials = c.trials.unwrap_or(sweep.trials);
    sweep.seed = c.seed.unwrap_or(sweep.seed);
    let root = resolve_output_dir(c.out.as_deref());
    let experiments = sweep.expand()?;
    fs::create_dir_all(&root)?;
    fs::write(root.join("sweep.json"), serde_json::to_string_pretty(&sweep)?)?;
    for config in &experiments {
        let dir = root.join(experiment_dir_name(config));
        let result = run_experiment(config, c.jobs)?;
        write_experiment(&dir, &result)?;
        report(&dir, &result);
    }
    Ok(())
}

fn ecdf(args: EcdfArgs) -> Result<()> {
    let mut out = String::from("experiment,strategy,problem,checkpoint,proportion\n");
    for dir in &args.input {
        let r = read_experiment(dir).with_context(|| format!("reading experiment in {}", dir.display()))?;
        let config = &r.summary.config;
        let problem = config.problem.build()?;
        let targets = generate_targets(problem.clean_value(&problem.initial_mean), args.targets)?;
        let lambda = config
            .overrides
            .lambda
            .unwrap_or_else(|| default_lambda(config.problem.dim));
        let checkpoints = ecdf_checkpoints(lambda, config.budget.max(1), args.checkpoints);
        let curve = compute_ecdf(&r.records, &targets, &checkpoints)?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for (c, p) in curve.checkpoints.iter().zip(&curve.proportion) {
            out.push_str(&format!("{name},{},{},{c},{p}\n", config.strategy, config.problem));
        }
    }
    match &args.out {
        Some(p) => fs::write(p, out).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn lemma_check(args: LemmaArgs) -> Result<bool> {
    let mut config = LemmaConfig::default();
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.samples {
        config.counterexample_samples = n as usize;
        config.additive_samples = n as usize;
    }
    let report = lemma_checks(&config)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(p) = &args.out {
        fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Ecdf(a) => ecdf(a).map(|_| true),
        Command::LemmaCheck(a) => lemma_check(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
