use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exittails_cli::{report, run, ExperimentConfig, ExperimentKind};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "exittails", version, about = "Exit-time tail experiments for 1-D diffusions near an unstable equilibrium")]
struct Cli {
    /// Output root; runs go to <out>/<name>-<UTC timestamp>/
    #[arg(long, global = true, env = "EXITTAILS_OUT", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides parallelism from the config
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model's equilibrium assumptions
    Validate(RunArgs),
    /// Tabulate the linearizing map
    Linearize(RunArgs),
    /// Evaluate the asymptotic formulas
    Predict(RunArgs),
    /// Tail of the exit time from the whole interval or a small neighbourhood
    RunTail(RunArgs),
    /// Tail of the exit time for the linear process
    RunLinearTail(RunArgs),
    /// Position of surviving linear paths
    RunEquidist(RunArgs),
    /// Distance between the linearized process and its linear counterpart
    RunCoupling(RunArgs),
    /// Overshoot law and exit side of surviving paths
    RunConditional(RunArgs),
    /// Join tail runs with predictions
    Report {
        /// Manifest files or run directories
        manifests: Vec<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn load(args: &RunArgs, allowed: &[ExperimentKind], forced: Option<ExperimentKind>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(kind) = forced {
        cfg.kind = kind;
    } else if !allowed.contains(&cfg.kind) {
        let names: Vec<&str> = allowed.iter().map(|k| k.as_str()).collect();
        return Err(Failure::Usage(format!(
            "{}: kind = \"{}\" does not match this subcommand (expected {})",
            args.config.display(),
            cfg.kind.as_str(),
            names.join(" or ")
        )));
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let outcome = run(cfg, out).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{}", outcome.dir.join(exittails_cli::run::MANIFEST_FILE).display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    use ExperimentKind as K;
    let (args, allowed, forced) = match &cli.command {
        Command::Validate(a) => (a, &[][..], Some(K::Validate)),
        Command::Linearize(a) => (a, &[][..], Some(K::Linearize)),
        Command::Predict(a) => (a, &[][..], Some(K::Predict)),
        Command::RunTail(a) => (a, &[K::TailX, K::TailY][..], None),
        Command::RunLinearTail(a) => (a, &[K::LinearTail][..], None),
        Command::RunEquidist(a) => (a, &[K::Equidist][..], None),
        Command::RunCoupling(a) => (a, &[K::Coupling][..], None),
        Command::RunConditional(a) => (a, &[K::ConditionalLaw][..], None),
        Command::Report { manifests } => {
            let rep = report(manifests).map_err(|e| match e {
                exittails_cli::ReportError::Usage(m) => Failure::Usage(m),
                other => Failure::Runtime(other.to_string()),
            })?;
            let stamp = exittails_cli::run::timestamp(&chrono::Utc::now());
            let dir = exittails_cli::run::fresh_dir(&cli.out, "report", &stamp)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let path = dir.join("report.csv");
            std::fs::write(&path, &rep.csv).map_err(|e| Failure::Runtime(e.to_string()))?;
            print!("{}", rep.text);
            println!("{}", path.display());
            return Ok(());
        }
    };
    let cfg = load(args, allowed, forced)?;
    execute(&cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
