//! Command-line front end. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 failure while running.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_build_lang, cmd_split, cmd_sweep, cmd_train, Checkpoint};
pub use config::RunConfig;

use crate::error::Result;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "semready",
    version,
    about = "Contrastive learnable/memorizable split and transmission KPIs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the encoder and write checkpoints plus per-epoch metrics.
    Train(Common),
    /// Assign points to clusters and write the learnable/memorizable split.
    Split(WithCheckpoint),
    /// Build the semantic language for the learnable points.
    BuildLang(WithCheckpoint),
    /// Run the complexity sweep for all schemes.
    Sweep(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct WithCheckpoint {
    #[command(flatten)]
    pub common: Common,
    /// Directory written by `train`; defaults to the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for s in &self.overrides {
            let (k, v) = config::parse_assignment(s)?;
            overrides.push((k.to_string(), v.to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            let quoted = toml::Value::String(out.to_string_lossy().into_owned()).to_string();
            overrides.push(("out".into(), quoted));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Train(c) => cmd_train(&c.resolve()?),
        Command::Sweep(c) => cmd_sweep(&c.resolve()?),
        Command::Split(w) | Command::BuildLang(w) => {
            let cfg = w.common.resolve()?;
            let dir = w.checkpoint.clone().unwrap_or_else(|| cfg.out.clone());
            if matches!(cli.command, Command::Split(_)) {
                cmd_split(&cfg, &dir)
            } else {
                cmd_build_lang(&cfg, &dir)
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
