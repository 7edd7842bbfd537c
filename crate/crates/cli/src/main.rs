use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reachtube::config::RunConfig;
use reachtube::gridsolver::ValueGrid;
use reachtube::runs::{self, LoadedSource};
use reachtube::valuenet::Activation;
use reachtube::{Error, Result};

/// Neural and grid solvers for reachability games.
#[derive(Parser)]
#[command(name = "reachtube", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a value network from a config file.
    Train {
        config: PathBuf,
        /// Root directory for run directories.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Run name (defaults to the config file stem).
        #[arg(long)]
        name: Option<String>,
    },
    /// Solve the config's [grid] block; one file per snapshot.
    Gridsolve {
        config: PathBuf,
        /// Output directory (defaults to grids/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare networks with a grid snapshot.
    Eval(EvalArgs),
    /// Simulate the starts of a scenario config under a checkpoint or grid.
    Rollout {
        /// Checkpoint, grid file, or directory of grid files.
        source: PathBuf,
        /// Config with [system] and [scenario] blocks.
        scenario: PathBuf,
        /// Run the safety filter instead of optimal play.
        #[arg(long)]
        filtered: bool,
        #[arg(long, default_value = "rollouts")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Grid snapshot to compare against.
    #[arg(long)]
    grid: PathBuf,
    /// Single checkpoint to evaluate.
    #[arg(long, conflicts_with_all = ["config", "activation", "seeds"])]
    checkpoint: Option<PathBuf>,
    /// Config to train for a sweep over activations and seeds.
    #[arg(long, requires = "seeds")]
    config: Option<PathBuf>,
    /// Activations to sweep (sine, relu, tanh, sigmoid); defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    activation: Vec<String>,
    /// Seeds to sweep.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Root directory for sweep training runs.
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
    /// Output file (single) or directory (sweep); defaults to stdout / eval/<config stem>.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn eval(args: EvalArgs) -> Result<()> {
    if let Some(ck) = &args.checkpoint {
        let record = runs::evaluate_files(ck, &args.grid)?;
        let text = to_json(&record)?;
        match &args.out {
            Some(path) => std::fs::write(path, text + "\n")?,
            None => println!("{text}"),
        }
        return Ok(());
    }
    let Some(cfg_path) = &args.config else {
        return Err(Error::Config("eval needs --checkpoint or --config".into()));
    };
    let cfg = RunConfig::load(cfg_path)?;
    let activations = if args.activation.is_empty() {
        vec![cfg.resolved().network.unwrap_or_default().activation]
    } else {
        args.activation
            .iter()
            .map(|a| Activation::parse(a).ok_or_else(|| Error::Config(format!("unknown activation `{a}`"))))
            .collect::<Result<_>>()?
    };
    let grid = ValueGrid::load(&args.grid)?;
    let name = stem(cfg_path);
    let report = runs::sweep(&cfg, &name, &activations, &args.seeds, &grid, &args.grid.display().to_string(), &args.runs)?;
    let out = args.out.unwrap_or_else(|| Path::new("eval").join(&name));
    report.write(&out)?;
    for s in &report.summary {
        println!(
            "{}: median mse {:e}, median volume error {:.3}% over {} seeds",
            s.activation.name(),
            s.median_mse,
            s.median_volume_error,
            s.runs
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, name } => {
            let cfg = RunConfig::load(&config)?;
            let run = runs::train_run(&cfg, &name.unwrap_or_else(|| stem(&config)), &out)?;
            let last = run.log.last();
            println!(
                "{} ({} iterations, final loss {:e})",
                run.dir.display(),
                run.log.len(),
                last.map_or(f64::NAN, |r| r.total())
            );
        }
        Command::Gridsolve { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| Path::new("grids").join(stem(&config)));
            for p in runs::grid_run(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Eval(args) => eval(args)?,
        Command::Rollout { source, scenario, filtered, out } => {
            let cfg = RunConfig::load(&scenario)?;
            let system = cfg.system.build()?;
            let src = LoadedSource::load(&source)?;
            let base = scenario.parent().unwrap_or(Path::new("."));
            let summary = runs::rollout_run(&system, &src, cfg.scenario()?, base, filtered, &out)?;
            println!("{}", to_json(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
