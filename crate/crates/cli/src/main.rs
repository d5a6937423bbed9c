use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use gaclab::agent::{evaluate, TrainConfig};
use gaclab::envs::make_env;
use gaclab::harness::config::{apply_setting, parse_pairs};
use gaclab::harness::qsurface::DEFAULT_RESOLUTION;
use gaclab::harness::{
    bound_rows, local_maxima, output_root, q_surface, read_checkpoint, run_battery, run_sweep, run_training,
    write_battery, write_bound_table, write_q_surface, BatterySpec, SurfaceKind, SweepAxis, SweepSpec,
};
use gaclab::schedule::BetaSchedule;
use gaclab::tabular::RefreshRule;
use gaclab::{Error, Result};

#[derive(Parser)]
#[command(name = "gaclab", version, about = "Greedy actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its manifest, metrics and checkpoint.
    Train(TrainArgs),
    /// Train one run per (value, seed) pair along an exploration axis.
    Sweep(SweepArgs),
    /// Run the tabular convergence battery against exact value iteration.
    Tabular(TabularArgs),
    /// Tabulate log-sum-exp, softmax mean and entropy for integer draws.
    BoundTable(BoundArgs),
    /// Export critic values over the 2D action square.
    Qsurface(QSurfaceArgs),
    /// Evaluate a checkpointed policy with deterministic actions.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Base configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Behavior mode: gac or sac_baseline.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Beta base coefficient; the default rule multiplies it by the epoch.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sample_range: Option<f64>,
    #[arg(long)]
    sample_count: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Extra `key=value` overrides applied after the flags above.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root (defaults to $GACLAB_OUT, then ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Also store the replay buffer in the checkpoint.
    #[arg(long)]
    save_replay: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    /// beta, sample_range or sample_count.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct TabularArgs {
    #[arg(long, default_value_t = 20)]
    mdps: usize,
    #[arg(long, default_value_t = 6)]
    max_states: usize,
    #[arg(long, default_value_t = 4)]
    max_actions: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// linear, constant or power:<exponent>.
    #[arg(long, default_value = "linear")]
    beta_rule: String,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refresh both tables every iteration instead of alternating.
    #[arg(long)]
    simultaneous: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000,100000,1000000")]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,1,100")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (defaults to <out root>/bound_table.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QSurfaceArgs {
    /// Run directory or checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// q1, q2, qmax or qmin.
    #[arg(long, default_value = "qmin")]
    which: String,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Comma-separated probe state; defaults to the env reset state at seed 0.
    #[arg(long, value_delimiter = ',')]
    probe: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage_error(msg: &str) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

/// File values first, then named flags, then `--set` overrides.
fn build_config(flags: &RunFlags) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut env_given = flags.env.is_some();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path)?;
        let mut pairs: Vec<_> = parse_pairs(&text)?
            .into_iter()
            .filter(|(k, _)| !k.starts_with("run."))
            .collect();
        pairs.sort_by_key(|(k, _)| k != "beta_rule");
        for (k, v) in pairs {
            env_given |= k == "env";
            apply_setting(&mut config, &k, &v)?;
        }
    }
    let mut set = |key: &str, value: Option<String>| match value {
        Some(v) => apply_setting(&mut config, key, &v),
        None => Ok(()),
    };
    set("env", flags.env.clone())?;
    set("mode", flags.mode.clone())?;
    set("epochs", flags.epochs.map(|v| v.to_string()))?;
    set("seed", flags.seed.map(|v| v.to_string()))?;
    set("alpha", flags.alpha.map(|v| v.to_string()))?;
    set("beta", flags.beta.map(|v| v.to_string()))?;
    set("sample_range", flags.sample_range.map(|v| v.to_string()))?;
    set("sample_count", flags.sample_count.map(|v| v.to_string()))?;
    set("hidden", flags.hidden.clone())?;
    set("batch_size", flags.batch_size.map(|v| v.to_string()))?;
    for o in &flags.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        env_given |= k.trim() == "env";
        apply_setting(&mut config, k.trim(), v)?;
    }
    if !env_given {
        usage_error("an environment is required: pass --env <pendulum|pointmass|bandit2d> or set `env` in --config");
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = build_config(&args.run)?;
    let root = output_root(args.run.out.as_deref());
    let out = run_training(config, &root, args.save_replay)?;
    println!("run directory: {}", out.dir.display());
    if let Some(f) = out.final_eval_return() {
        println!("epochs: {}  final eval return: {f:.4}", out.metrics.len());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let axis: SweepAxis = args.axis.parse()?;
    let spec = SweepSpec {
        base: build_config(&args.run)?,
        axis,
        values: args.values,
        seeds: args.seeds,
        workers: args.workers,
    };
    let out = run_sweep(&spec, &output_root(args.run.out.as_deref()))?;
    println!(
        "{:>14} {:>5} {:>8} {:>14} {:>12}",
        axis.to_string(),
        "runs",
        "failed",
        "final eval",
        "std"
    );
    for r in &out.rows {
        println!(
            "{:>14} {:>5} {:>8} {:>14.4} {:>12.4}",
            r.value, r.runs, r.failures, r.mean_final_eval, r.std_final_eval
        );
    }
    println!("aggregate: {}", out.dir.join("aggregate.csv").display());
    Ok(())
}

fn cmd_tabular(args: TabularArgs) -> Result<()> {
    let spec = BatterySpec {
        mdps: args.mdps,
        max_states: args.max_states,
        max_actions: args.max_actions,
        gamma: args.gamma,
        schedule: BetaSchedule::from_rule(&args.beta_rule, args.beta)?,
        iterations: args.iterations,
        tol: args.tol,
        seed: args.seed,
        rule: if args.simultaneous {
            RefreshRule::Simultaneous
        } else {
            RefreshRule::Alternate
        },
    };
    let report = run_battery(&spec)?;
    let dir = output_root(args.out.as_deref()).join("tabular");
    write_battery(&report, &dir)?;
    let converged = report
        .entries
        .iter()
        .filter(|e| e.trace.final_distance() <= spec.tol)
        .count();
    println!("max final sup-norm distance to Q*: {:.3e}", report.max_final_distance());
    println!("within {:e}: {converged}/{}", spec.tol, report.entries.len());
    println!("traces: {}", dir.display());
    Ok(())
}

fn cmd_bound_table(args: BoundArgs) -> Result<()> {
    let rows = bound_rows(&args.n, &args.beta, args.seed)?;
    let path = args.out.unwrap_or_else(|| output_root(None).join("bound_table.csv"));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_bound_table(&rows, &path)?;
    println!(
        "{:>8} {:>7} {:>12} {:>12} {:>12} {:>8}",
        "n", "beta", "lse", "sm", "entropy/b", "max"
    );
    for r in &rows {
        println!(
            "{:>8} {:>7} {:>12.4} {:>12.4} {:>12.4} {:>8}",
            r.n, r.beta, r.lse, r.sm, r.entropy_term, r.max
        );
    }
    println!("written: {}", path.display());
    Ok(())
}

fn cmd_qsurface(args: QSurfaceArgs) -> Result<()> {
    let which: SurfaceKind = args.which.parse()?;
    let ck = read_checkpoint(&args.checkpoint)?;
    if ck.critic.action_dim() != 2 {
        usage_error(&format!(
            "qsurface needs an environment with a 2D action space; `{}` has {}",
            ck.config.env,
            ck.critic.action_dim()
        ));
    }
    let probe = match args.probe {
        Some(p) => p,
        None => make_env(&ck.config.env)?.reset(0),
    };
    let grid = q_surface(&ck.critic, &probe, args.resolution, which)?;
    let path = args
        .out
        .unwrap_or_else(|| checkpoint_root(&args.checkpoint).join(format!("qsurface_{which}.csv")));
    write_q_surface(&grid, &path)?;
    println!("local maxima (4-neighbor): {}", local_maxima(&grid.values).len());
    println!("written: {}", path.display());
    Ok(())
}

fn checkpoint_root(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == "checkpoint") {
        path.parent().unwrap_or(path).to_path_buf()
    } else {
        path.to_path_buf()
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let mut env = make_env(&ck.config.env)?;
    let report = evaluate(env.as_mut(), &ck.policy, args.episodes.max(1), args.seed)?;
    for (i, r) in report.returns.iter().enumerate() {
        println!("episode {i}: {r:.4}");
    }
    println!("mean return: {:.4}", report.mean());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Tabular(a) => cmd_tabular(a),
        Command::BoundTable(a) => cmd_bound_table(a),
        Command::Qsurface(a) => cmd_qsurface(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
