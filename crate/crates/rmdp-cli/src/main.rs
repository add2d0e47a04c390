//! `rmdp` — solve robust MDPs, run sampled-model experiments, and evaluate
//! the accompanying sample-complexity calculators from the command line.
//!
//! Subcommands: `solve`, `revi`, `bounds`, `gap`, `experiment`. All
//! randomized commands require an explicit `--seed`; given the same seed and
//! flags, outputs (including CSV artifacts) are byte-identical for any
//! `--workers` setting.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rmdp::envs::{EnvFamily, FrozenMap};
use rmdp::harness::{self, PolicyEntry};
use rmdp::{bounds, generative, load_mdp, robustdp, validate_mdp, AmbiguitySet, TabularMdp};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rmdp",
    version,
    about = "Tabular robust-MDP solver and model-based experiment runner",
    after_help = "Worker threads never change results, only throughput."
)]
struct Cli {
    /// Worker threads (default: machine parallelism; RMDP_WORKERS env var
    /// is used when the flag is absent).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a robust MDP from a JSON file to a fixed-point tolerance.
    Solve(SolveArgs),
    /// Sample a generative model, then run exactly K worst-case backups.
    Revi(ReviArgs),
    /// Print the iteration count K0 and the sample-size threshold for a set.
    Bounds(BoundsArgs),
    /// Evaluate the two-state robustness-gap construction.
    Gap(GapArgs),
    /// Run an experiment family and write its records as CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SetKind {
    None,
    Tv,
    Chi2,
    Kl,
}

impl SetKind {
    fn to_set(self, radius: Option<f64>) -> Result<AmbiguitySet> {
        match (self, radius) {
            (SetKind::None, None) => Ok(AmbiguitySet::None),
            (SetKind::None, Some(_)) => bail!("--radius is meaningless with --set none"),
            (_, None) => bail!("--radius is required for tv, chi2, and kl sets"),
            (SetKind::Tv, Some(radius)) => Ok(AmbiguitySet::Tv { radius }),
            (SetKind::Chi2, Some(radius)) => Ok(AmbiguitySet::Chi2 { radius }),
            (SetKind::Kl, Some(radius)) => Ok(AmbiguitySet::Kl { radius }),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Path to the MDP JSON file.
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, value_enum)]
    set: SetKind,
    /// Ambiguity radius (required unless --set none).
    #[arg(long)]
    radius: Option<f64>,
    /// Sup-norm accuracy of the reported values.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReviArgs {
    /// Path to the true MDP JSON file (the generative model samples it).
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, value_enum)]
    set: SetKind,
    #[arg(long)]
    radius: Option<f64>,
    /// Generative samples per state-action pair.
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    /// Number of worst-case backups K.
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    set: SetKind,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    /// Ambiguity radius (used by the chi2 and kl thresholds).
    #[arg(long)]
    radius: Option<f64>,
    /// Minimal nominal transition probability (kl threshold only).
    #[arg(long)]
    lambda_kl: Option<f64>,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long)]
    gamma: f64,
    /// Write the gap report JSON here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gamblers,
    Frozenlake,
    Chain,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Error after each of the first k backups on one sampled model.
    Iters,
    /// Final error over a sample-count grid and a block of seeds.
    Samples,
    /// Win fractions of robust vs non-robust policies on perturbed tests.
    Robustness,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    family: Family,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = SetKind::Tv)]
    set: SetKind,
    #[arg(long)]
    radius: Option<f64>,
    /// Discount factor of the constructed environment.
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Master seed; every randomized cell derives a substream from it.
    #[arg(long)]
    seed: u64,
    /// Gambler's head probability (nominal environment).
    #[arg(long, default_value_t = 0.6)]
    p_head: f64,
    /// Frozen-lake intended-direction probability (nominal environment).
    #[arg(long, default_value_t = 0.4)]
    p_intended: f64,
    /// Frozen-lake map file (8 lines of S/F/H/G); default: canonical 8x8.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Generative samples per state-action pair (iters and robustness modes).
    #[arg(long, default_value_t = 3000)]
    samples: u64,
    /// Backups to record in iters mode.
    #[arg(long, default_value_t = 200)]
    k_max: usize,
    /// Sample-count grid for samples mode.
    #[arg(long, value_delimiter = ',', default_value = "100,500,3000,5000")]
    sample_grid: Vec<u64>,
    /// Number of consecutive seeds (seed, seed+1, ...) in samples mode.
    #[arg(long, default_value_t = 10)]
    seed_count: u64,
    /// Backups per solve in samples mode.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Sweep of test parameters in robustness mode (gamblers: head
    /// probabilities; frozenlake: random-action probabilities rho).
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    /// Fixed-point tolerance of the policy-training solves.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers.or_else(|| {
        std::env::var("RMDP_WORKERS").ok().and_then(|s| s.parse().ok())
    });
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Solve(args) => cmd_solve(args),
        Command::Revi(args) => cmd_revi(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::Gap(args) => cmd_gap(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn load_checked(path: &PathBuf) -> Result<TabularMdp> {
    let mdp = load_mdp(path).with_context(|| format!("loading {}", path.display()))?;
    let issues = validate_mdp(&mdp);
    if !issues.is_empty() {
        let lines: Vec<String> = issues.iter().map(|v| v.to_string()).collect();
        bail!("{} failed validation:\n  {}", path.display(), lines.join("\n  "));
    }
    Ok(mdp)
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let mdp = load_checked(&args.mdp)?;
    let set = args.set.to_set(args.radius)?;
    let report = robustdp::robust_value_iteration(&mdp, &set, args.tol, args.max_iters)?;
    if !report.converged {
        eprintln!(
            "warning: residual {:.3e} after {} iterations; values are not at tolerance",
            report.residual, report.iterations
        );
    }
    emit_json(&report, args.out.as_ref())
}

fn cmd_revi(args: ReviArgs) -> Result<()> {
    let mdp = load_checked(&args.mdp)?;
    let set = args.set.to_set(args.radius)?;
    let hat = generative::estimate_mdp(&mdp, args.samples, args.seed)?;
    let report = robustdp::revi(&hat, &set, args.iters)?;
    emit_json(&report, args.out.as_ref())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let k0 = bounds::revi_iterations(args.gamma, args.eps)?;
    println!("K0 = {k0}");
    let (name, n) = match args.set {
        SetKind::None => bail!("--set none has no sample-size threshold; pick tv, chi2, or kl"),
        SetKind::Tv => (
            "N_tv",
            bounds::tv_sample_complexity(args.gamma, args.eps, args.delta, args.states, args.actions)?,
        ),
        SetKind::Chi2 => {
            let radius = args.radius.context("--radius is required for the chi2 threshold")?;
            (
                "N_chi2",
                bounds::chi2_sample_complexity(
                    args.gamma,
                    args.eps,
                    args.delta,
                    args.states,
                    args.actions,
                    radius,
                )?,
            )
        }
        SetKind::Kl => {
            let radius = args.radius.context("--radius is required for the kl threshold")?;
            let lambda = args.lambda_kl.context("--lambda-kl is required for the kl threshold")?;
            (
                "N_kl",
                bounds::kl_sample_complexity(
                    args.gamma,
                    args.eps,
                    args.delta,
                    args.states,
                    args.actions,
                    radius,
                    lambda,
                )?,
            )
        }
    };
    println!("{name} = {n}");
    Ok(())
}

fn cmd_gap(args: GapArgs) -> Result<()> {
    let report = bounds::gap_values(args.gamma)?;
    println!("V_robust(0)        = {}", report.robust_optimal_value);
    println!("V_nominal_pi(0)    = {}", report.nominal_policy_value);
    println!("analytic formula   = {}", report.analytic_policy_value);
    println!("gap                = {}", report.gap);
    println!("gap lower bound    = {}", report.gap_lower_bound);
    let agreement = (report.nominal_policy_value - report.analytic_policy_value).abs();
    println!(
        "numeric-analytic agreement: |{agreement:.3e}| <= {:.0e}: ok",
        bounds::GAP_NUMERIC_TOL
    );
    if let Some(out) = args.out.as_ref() {
        emit_json(&report, Some(out))?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let family = match args.family {
        Family::Gamblers => EnvFamily::Gamblers { p_head: args.p_head, gamma: args.gamma },
        Family::Frozenlake => {
            let map = match args.map.as_ref() {
                Some(path) => FrozenMap::parse(
                    &std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => FrozenMap::canonical(),
            };
            EnvFamily::FrozenLake { map, p_intended: args.p_intended, gamma: args.gamma }
        }
        Family::Chain => EnvFamily::Chain { gamma: args.gamma },
    };
    let set = args.set.to_set(args.radius)?;
    let records = match args.mode {
        Mode::Iters => harness::convergence_vs_iterations(
            &family,
            &set,
            args.samples,
            args.seed,
            args.k_max,
        )?,
        Mode::Samples => {
            let seeds: Vec<u64> = (args.seed..args.seed + args.seed_count).collect();
            harness::convergence_vs_samples(&family, &set, &args.sample_grid, &seeds, args.iters)?
        }
        Mode::Robustness => {
            let sweep = args
                .sweep
                .as_deref()
                .context("--sweep is required in robustness mode")?;
            if matches!(set, AmbiguitySet::None) {
                bail!("robustness mode compares a robust policy against the non-robust baseline; pick --set tv, chi2, or kl");
            }
            let nominal = family.build()?;
            let hat = generative::estimate_mdp(&nominal, args.samples, args.seed)?;
            let robust =
                robustdp::robust_value_iteration(&hat, &set, args.tol, 10_000_000)?;
            let plain =
                robustdp::robust_value_iteration(&hat, &AmbiguitySet::None, args.tol, 10_000_000)?;
            let policies = vec![
                PolicyEntry {
                    set_kind: set.tag().to_string(),
                    radius: set.radius(),
                    policy: robust.policy,
                },
                PolicyEntry { set_kind: "none".to_string(), radius: 0.0, policy: plain.policy },
            ];
            harness::robustness_eval(
                &policies,
                &family,
                sweep,
                args.trials,
                args.horizon,
                args.seed,
            )?
        }
    };
    harness::save_csv(&records, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}
