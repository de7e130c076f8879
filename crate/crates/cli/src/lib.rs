//! The `besim` command-line tool: synthetic data, training, scoring,
//! simulation, state export and SVG rendering.

use std::fmt;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod render;
pub mod settings;

use commands::{
    EvalArgs, ExportArgs, GensynthArgs, LoglikArgs, RenderArgs, SimulateArgs, TrainArgs,
};

/// Failure with the process exit code it maps to: 1 usage or configuration,
/// 2 data, 3 numeric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

impl From<besim_core::Error> for CliError {
    fn from(e: besim_core::Error) -> Self {
        use besim_core::Error as E;
        let code = match e {
            E::Config(_) => 1,
            E::Contract(_) | E::Index { .. } | E::Data(_) | E::Parse { .. } | E::Io(_) => 2,
            E::Training(_) | E::Simulation { .. } => 3,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "besim", version, about = "Behavior modeling with a dual-stack recurrent network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic fly or handwriting trials.
    Gensynth(GensynthArgs),
    /// Train a model; writes a checkpoint and a loss curve.
    Train(TrainArgs),
    /// Action-classification scores of a trained model.
    Eval(EvalArgs),
    /// Motion log-likelihood of a model and the four baseline policies.
    Loglik(LoglikArgs),
    /// Closed-loop simulation from a trained model.
    Simulate(SimulateArgs),
    /// Per-frame hidden states as CSV.
    ExportStates(ExportArgs),
    /// SVG plot of simulated or recorded trajectories, or of pen strokes.
    Render(RenderArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gensynth(a) => commands::gensynth(&a.resolve_printed()?),
        Command::Train(a) => commands::train(&a.resolve_printed()?),
        Command::Eval(a) => commands::eval(&a.resolve_printed()?),
        Command::Loglik(a) => commands::loglik(&a.resolve_printed()?),
        Command::Simulate(a) => commands::simulate(&a.resolve_printed()?),
        Command::ExportStates(a) => commands::export_states(&a.resolve_printed()?),
        Command::Render(a) => commands::render(&a.resolve_printed()?),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string()))?;
    run(cli)
}

/// Caps the worker pool at `BESIM_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BESIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("BESIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))
}
