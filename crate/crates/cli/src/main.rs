use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfts_cli::{cost, load_config, run, serve, suite, CliError, Overrides, Report};

#[derive(Parser)]
#[command(name = "pfts", version, about = "Thompson sampling from pairwise preferences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed list; repeat for several seeds.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory for traces.csv, aggregate.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
}

impl Common {
    fn overrides(&self, policy: Option<String>) -> Overrides {
        Overrides { seeds: self.seed.clone(), out: self.out.clone(), horizon: self.horizon, policy }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One episode: a single policy and seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Policy label from the config; defaults to the first listed.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Every configured policy against every seed.
    Suite {
        #[command(flatten)]
        common: Common,
    },
    /// Suite plus the cost-adjusted comparison table.
    Cost {
        #[command(flatten)]
        common: Common,
    },
    /// HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory for session files; sessions are kept in memory if absent.
        #[arg(long)]
        store_path: Option<PathBuf>,
    },
}

fn print(report: Report) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Usage(e.to_string()))?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, policy } => print(run(load_config(&common.config, &common.overrides(policy))?)?),
        Command::Suite { common } => print(suite(load_config(&common.config, &common.overrides(None))?)?),
        Command::Cost { common } => print(cost(load_config(&common.config, &common.overrides(None))?)?),
        Command::Serve { port, host, store_path } => serve(SocketAddr::new(host, port), store_path),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
