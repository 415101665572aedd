use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use clarep_cli::commands::{run_stage, Stage};
use clarep_cli::config::resolve;
use clarep_core::{Error, Result};

#[derive(Parser)]
#[command(name = "clarep", version, about = "CLARID / CaDistill toy experiments")]
struct Cli {
    /// TOML config file layered over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; wins over the file and --set.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    stage: Stage,
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let (cfg, trail) = resolve(cli.config.as_deref(), &cli.set, cli.seed)?;
    eprintln!("config: {}", trail.join(" < "));
    run_stage(cli.stage, cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
