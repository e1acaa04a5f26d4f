//! `ou-denoise`: simulate, fit and sweep Ornstein–Uhlenbeck series under
//! thermal and multiplicative measurement noise.
//!
//! Exit codes: 0 success, 2 bad usage or input, 3 a fit flagged as not
//! converged, 1 anything else.

mod args;
mod fit;
mod manifest;
mod replay;
mod simulate;
mod spectra;
mod sweep;
mod table;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure caused by the caller: bad flags, missing files, unsupported combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What a command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    NotConverged,
}

pub fn run(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Spectra(a) => spectra::run(a),
        Command::Replay(a) => replay::run(a),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    use ou_denoise::Error as E;
    err.chain().any(|cause| {
        cause.is::<UsageError>()
            || matches!(
                cause.downcast_ref::<E>(),
                Some(E::InvalidArgument(_) | E::TooShort { .. } | E::Parse(_) | E::DimensionMismatch { .. })
            )
            || cause
                .downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::NotFound)
            || matches!(cause.downcast_ref::<E>(), Some(E::Io(e)) if e.kind() == std::io::ErrorKind::NotFound)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: fit did not converge");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
