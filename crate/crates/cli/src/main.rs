//! `biopsim` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error. Tables go to
//! stdout; machine-readable reports only to the file given by `--out`.

mod commands;
mod config;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use biopsim::session::Cohort;

#[derive(Debug, Parser)]
#[command(name = "biopsim", version, about = "Prostate biopsy simulator engine")]
struct Cli {
    /// JSON config with gun, fan, limits, expert/novice policies and weights.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom case bundle.
    GenPhantom(GenPhantomArgs),
    /// Report the sector planes and per-sector volumes of a case.
    Partition(PartitionArgs),
    /// Simulate an expert/novice cohort and store its procedure logs.
    Simulate(SimulateArgs),
    /// Re-score a procedure log and print its feedback.
    Replay(ReplayArgs),
    /// Reliability and construct-validity reports over stored procedures.
    Stats(StatsArgs),
    /// Run the HTTP/WebSocket service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenPhantomArgs {
    /// Phantom spec JSON; defaults are used for missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Case id; defaults to `phantom-<seed>`.
    #[arg(long)]
    pub id: Option<String>,
    /// Case directory to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Case directory.
    #[arg(long)]
    pub case: PathBuf,
    /// Monte-Carlo sample count (rounded to a cube).
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Allowed relative deviation of each sector from V/12.
    #[arg(long, default_value_t = 0.005)]
    pub tolerance: f64,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub experts: usize,
    #[arg(long, default_value_t = 14)]
    pub novices: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Data root receiving `users.json` and `sessions/`; must hold no procedures yet.
    #[arg(long)]
    pub sessions_dir: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Procedure log (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub case: PathBuf,
    /// Feedback JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub sessions_dir: PathBuf,
    /// Restrict the listing and reliability analysis to one cohort.
    #[arg(long, value_parser = parse_cohort)]
    pub cohort: Option<Cohort>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-procedure CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long)]
    pub cases_dir: PathBuf,
    #[arg(long)]
    pub sessions_dir: PathBuf,
}

fn parse_cohort(s: &str) -> Result<Cohort, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown cohort '{s}' (expected expert, novice or simulated)"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = config::SimConfig::load(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::GenPhantom(a) => commands::gen_phantom(&a, &config),
        Command::Partition(a) => commands::partition(&a),
        Command::Simulate(a) => commands::simulate(&a, &config),
        Command::Replay(a) => commands::replay(&a, &config),
        Command::Stats(a) => commands::stats(&a),
        Command::Serve(a) => commands::serve(&a, &config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
