use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ldcbf::runner::{self, cartpole, coverage, stochastic, toy, verify, Output, Report};
use ldcbf::{Error, Result};

#[derive(Parser)]
#[command(name = "ldcbf", version, about = "Limited-duration barrier experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Gradient,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic invariants against independent oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Learn a barrier for the 1D toy system and check it.
    LearnLdcbf(Common),
    /// Balance actor, learned barrier and filtered durations.
    Cartpole(Common),
    /// Move task with and without the learned barrier.
    Transfer(Common),
    /// Multi-agent coverage with energy barriers.
    Coverage(Common),
    /// Monte-Carlo check of the stochastic exit bound.
    StochasticCheck(Common),
}

fn execute(cmd: Cmd) -> Result<(Report, bool)> {
    let (report, json) = match cmd {
        Cmd::Verify { common, inject_fault } => {
            let mut cfg: verify::VerifyConfig = runner::load_config(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let fault = inject_fault.map(|FaultArg::Gradient| verify::Fault::Gradient);
            (verify::run(&cfg, fault)?, common.json)
        }
        Cmd::LearnLdcbf(common) => {
            let mut cfg: toy::ToyRun = runner::load_config(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            (toy::run(&cfg, &Output { dir: common.out })?.0, common.json)
        }
        Cmd::Cartpole(common) => {
            let mut cfg: ldcbf::trainer::cartpole::PipelineConfig = runner::load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.balance_seed = s;
            }
            (cartpole::run(&cfg, &Output { dir: common.out })?.0, common.json)
        }
        Cmd::Transfer(common) => {
            let mut cfg: cartpole::TransferRun = runner::load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.batch_seed = s;
            }
            (cartpole::run_transfer(&cfg, &Output { dir: common.out })?.0, common.json)
        }
        Cmd::Coverage(common) => {
            let mut cfg: coverage::CoverageRun = runner::load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seeds = vec![s];
            }
            (coverage::run(&cfg, &Output { dir: common.out })?.0, common.json)
        }
        Cmd::StochasticCheck(common) => {
            let mut cfg: stochastic::StochasticRun = runner::load_config(common.config.as_deref())?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            (stochastic::run(&cfg, &Output { dir: common.out })?.0, common.json)
        }
    };
    Ok((report, json))
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok((report, json)) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.table());
            }
            match report.first_failure() {
                None => ExitCode::SUCCESS,
                Some(c) => {
                    eprintln!("invariant failed: {}", c.name);
                    ExitCode::from(1)
                }
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
