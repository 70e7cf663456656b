//! `orca`: simulate, sweep, analyze and optimize ORCA memory runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orca_core::{Error, ErrorKind};
use serde_json::json;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "orca", version, about = "ORCA ladder memory simulation and analysis")]
struct Cli {
    /// TOML run config; defaults apply to everything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps and optimizer batches.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One storage and retrieval at the configured point.
    Simulate,
    /// Sweep storage time, total control energy or input photon number.
    Sweep,
    /// Recover efficiencies and figures from three histogram files.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        noise: PathBuf,
    },
    /// Optimise the read-in control or the energy ratio.
    Optimize {
        /// Trace CSV of an earlier run to replay.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print the effective config as TOML.
    Config,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Analysis => 3,
    }
}

fn fail(e: &Error) -> ExitCode {
    let code = exit_code(e.kind());
    let kind = match e.kind() {
        ErrorKind::Config => "config",
        ErrorKind::Numerical => "numerical",
        ErrorKind::Analysis => "analysis",
    };
    let body = json!({"error": {"kind": kind, "exit_code": code, "message": e.to_string()}});
    eprintln!("{body}");
    ExitCode::from(code)
}

fn run(cli: Cli) -> orca_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out).map(|_| ()),
        Command::Analyze { input, memory, noise } => {
            print!("{}", commands::analyze(&cfg, &input, &memory, &noise)?);
            Ok(())
        }
        Command::Optimize { resume } => commands::optimize(&cfg, &out, resume.as_deref()),
        Command::Config => {
            print!("{}", cfg.canonical());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&Error::Config(e.to_string().trim_end().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
