//! Command line driver: reads an experiment file, runs one subcommand and
//! writes hashed artifacts.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use commands::{run, Command, Outcome};
pub use config::ExperimentConfig;

use crate::error::Error;
use clap::Parser;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{module}: {source}")]
    Compute { module: &'static str, source: Error },
    #[error("io: {0}")]
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Compute { source: Error::Config(_), .. } => EXIT_CONFIG,
            _ => EXIT_COMPUTE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qpkam", version, about = "Reducibility, KAM and Nash-Moser experiments on quasi-periodic operators")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the one in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the frequency sampling.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "warn")]
    pub log_level: String,
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let src = std::fs::read_to_string(&cli.config).map_err(|e| CliError::Config(format!("{}: {e}", cli.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&src).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    let result = load_config(&cli).and_then(|cfg| {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        run(cli.command, &cfg, &out, cli.threads)
    });
    match result {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            match o.passed {
                Some(false) => {
                    eprintln!("verify: invariant checks failed");
                    EXIT_VERIFY
                }
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
