//! `lindprep run <config>`: one configured preparation run per invocation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lindprep::run::{run, write_outputs, LoadedConfig};
use lindprep::Error;

#[derive(Debug, Parser)]
#[command(
    name = "lindprep",
    version,
    about = "Dissipative state preparation for small fermionic systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log progress at info level (debug with RUST_LOG).
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the run described by a TOML configuration.
    Run {
        config: PathBuf,

        /// Directory for series.csv and report.json.
        #[arg(long, default_value = "lindprep-out")]
        out: PathBuf,

        /// Worker threads for trajectory sampling and jump construction.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn execute(config: PathBuf, out: PathBuf, threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let loaded = LoadedConfig::from_path(&config)?;
    let output = run(&loaded)?;
    write_outputs(&output, &out).map_err(|e| e.in_stage("output"))?;
    let fin = &output.report.final_state;
    println!(
        "t = {}  energy = {:.10}  infidelity = {:.3e}  multiplicity = {:.6}  -> {}",
        fin.time,
        fin.energy,
        fin.infidelity,
        fin.multiplicity,
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
        } => execute(config, out, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
