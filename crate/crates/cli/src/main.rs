mod args;
mod commands;

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use leia_core::ErrorKind;

use args::{resolve, Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Core(leia_core::Error),
    /// Wraps a core error with the file it came from.
    File {
        path: String,
        source: leia_core::Error,
    },
    Sweep {
        message: String,
        kind: ErrorKind,
    },
}

impl CliError {
    fn context(self, path: &Path) -> Self {
        match self {
            CliError::Core(source) => CliError::File { path: path.display().to_string(), source },
            other => other,
        }
    }

    fn exit_code(&self) -> u8 {
        let kind = match self {
            CliError::Config(_) => ErrorKind::Config,
            CliError::Data(_) => ErrorKind::Data,
            CliError::Core(e) | CliError::File { source: e, .. } => e.kind(),
            CliError::Sweep { kind, .. } => *kind,
        };
        match kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::File { path, source } => write!(f, "{path}: {source}"),
            CliError::Sweep { message, .. } => write!(f, "sweep: {message}"),
        }
    }
}

impl<E: Into<leia_core::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(resolve(a)?),
        Command::TrainErm(a) => commands::train_erm_cmd(resolve(a)?),
        Command::TrainGdro(a) => commands::train_gdro_cmd(resolve(a)?),
        Command::AdaptLeia(a) => commands::adapt_cmd(resolve(a)?),
        Command::Eval(a) => commands::eval(resolve(a)?),
        Command::Pipeline(a) => commands::pipeline(resolve(a)?),
        Command::Sweep(a) => commands::sweep(resolve(a)?),
        Command::Cev(a) => commands::cev(resolve(a)?),
        Command::Project(a) => commands::project_cmd(resolve(a)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
