use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pushpomdp::harness::{self, HarnessConfig, HarnessError, PlannerKind};

/// Plans tabletop pushes for blocks with an unknown center of mass.
#[derive(Debug, Parser)]
#[command(name = "pushpomdp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed the command uses.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (defaults depend on the command).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the push dataset.
    GenData(Common),
    /// Train the neural process and write a checkpoint plus loss CSV.
    Train(Common),
    /// Run the scenario x planner x budget x trial grid.
    Bench(Common),
    /// Count simulate calls per planner and budget.
    CountSims(Common),
    /// Prediction error against the number of context pushes.
    EvalContext(Common),
    /// Run one episode and write a JSON trace.
    PlanEpisode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        /// npt, pft<n> or random.
        #[arg(long)]
        planner: Option<PlannerKind>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::Train(c)
            | Command::Bench(c)
            | Command::CountSims(c)
            | Command::EvalContext(c)
            | Command::PlanEpisode { common: c, .. } => c,
        }
    }
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let common = cli.command.common();
    let config = HarnessConfig::load(&common.config)?;
    let (seed, out) = (common.seed, common.out.as_deref());
    match &cli.command {
        Command::GenData(_) => harness::cmd_gen_data(&config, seed, out).map(drop),
        Command::Train(_) => harness::cmd_train(&config, seed, out).map(drop),
        Command::Bench(_) => harness::cmd_bench(&config, seed, out).map(drop),
        Command::CountSims(_) => harness::cmd_count_sims(&config, seed, out).map(drop),
        Command::EvalContext(_) => harness::cmd_eval_context(&config, seed, out).map(drop),
        Command::PlanEpisode { scenario, planner, .. } => {
            harness::cmd_plan_episode(&config, scenario.as_deref(), *planner, seed, out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
