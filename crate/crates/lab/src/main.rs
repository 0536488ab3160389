use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpme_lab::{report, run_plan, ExperimentKind, LabError, Plan, RunOptions, THREADS_ENV};

#[derive(Parser)]
#[command(name = "vpme-lab", version, about = "Run and report particle-system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the Poisson-Boltzmann solver.
    PbValidate(RunArgs),
    /// One paired coupled/auxiliary run with its time series.
    Simulate(RunArgs),
    /// Law-of-large-numbers tails and the exact-inequality suite.
    Lln(RunArgs),
    /// Mean-field convergence down an N ladder.
    Converge(RunArgs),
    /// Flow convergence down a dyadic r ladder.
    FlowRate(RunArgs),
    /// Regenerate plots of a finished run from its CSV files.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML plan file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the plan.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the plan.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Render SVG plots after the run.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding summary.json.
    #[arg(long)]
    out: PathBuf,
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<bool, LabError> {
    let mut plan = Plan::load(&args.config)?;
    if plan.kind() != kind {
        return Err(LabError::Config(format!(
            "{} declares kind {} but the subcommand is {kind}",
            args.config.display(),
            plan.kind()
        )));
    }
    if let Some(seed) = args.seed {
        plan.experiment.seed = seed;
    }
    let out =
        args.out.or_else(|| plan.experiment.out.clone()).unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    }
    let outcome = run_plan(&plan, &RunOptions { out: out.clone(), plot: args.plot })?;
    println!("{kind}: wrote {}", out.display());
    if outcome.aborted > 0 {
        return Err(LabError::Aborted(outcome.aborted));
    }
    Ok(outcome.checks_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PbValidate(a) => execute(ExperimentKind::PbValidate, a),
        Command::Simulate(a) => execute(ExperimentKind::Simulate, a),
        Command::Lln(a) => execute(ExperimentKind::Lln, a),
        Command::Converge(a) => execute(ExperimentKind::Converge, a),
        Command::FlowRate(a) => execute(ExperimentKind::FlowRate, a),
        Command::Report(a) => report(&a.out).map(|kind| {
            println!("{kind}: plots regenerated in {}", a.out.join("plots").display());
            true
        }),
    };
    match result {
        Ok(passed) => {
            if !passed {
                println!("note: one or more experiment checks did not pass; see summary.json");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
