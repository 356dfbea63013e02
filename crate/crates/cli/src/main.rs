mod commands;
mod error;
mod scenario;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::scenario::LoadedScenario;

#[derive(Parser)]
#[command(
    name = "sim",
    version,
    about = "Soft-tissue catheter-insertion simulator",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for the constraint solver; also settable via
    /// SIM_THREADS. Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the insertion experiment and write record, field and summary files.
    Run {
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Search cluster and link parameters against a reference curve.
    Calibrate {
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Overrides the evaluation budget from the scenario file.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Compare simulated displacements against measured probe vectors.
    Validate {
        scenario: PathBuf,
        /// CSV with columns x,y,z,dx,dy,dz in metres.
        #[arg(long)]
        probes: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("SIM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {err}");
            std::process::exit(1);
        }
    }

    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, out } => {
            let scn = LoadedScenario::load(&scenario)?;
            commands::cmd_run(&scn, &out)
        }
        Command::Calibrate {
            scenario,
            out,
            budget,
        } => {
            let scn = LoadedScenario::load(&scenario)?;
            commands::cmd_calibrate(&scn, &out, budget)
        }
        Command::Validate {
            scenario,
            probes,
            out,
        } => {
            let scn = LoadedScenario::load(&scenario)?;
            commands::cmd_validate(&scn, &probes, &out)
        }
    }
}
