//! `obliv1d`: run a dealer, a party, a local simulation, the plaintext
//! oracle, or a benchmark.

mod commands;
mod logging;

use clap::Parser;
use std::process::ExitCode;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_OPERATIONAL: u8 = 3;
pub const EXIT_ABORT: u8 = 4;

#[derive(Parser)]
#[command(name = "obliv1d", version, about = "Oblivious inference for quantized 1-D CNNs")]
struct Cli {
    #[command(subcommand)]
    cmd: commands::Command,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Operational(String),
    Abort(String),
}

impl From<obliv1d::Error> for Failure {
    fn from(e: obliv1d::Error) -> Failure {
        match e {
            obliv1d::Error::Abort(_) => Failure::Abort(e.to_string()),
            e => Failure::Operational(e.to_string()),
        }
    }
}

impl From<obliv1d::model_io::ModelError> for Failure {
    fn from(e: obliv1d::model_io::ModelError) -> Failure {
        Failure::Operational(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::Operational(e.to_string())
    }
}

fn main() -> ExitCode {
    logging::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // Keep the subcommand name for the log line.
    let name = cli.cmd.name();
    match commands::run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, "usage", m),
                Failure::Operational(m) => (EXIT_OPERATIONAL, "operational", m),
                Failure::Abort(m) => (EXIT_ABORT, "abort", m),
            };
            log::error!(target: "obliv1d", "event=failed command={name} class={kind} error={msg:?}");
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
