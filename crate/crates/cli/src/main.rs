mod args;
mod commands;
mod logging;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// A failure, reported as one JSON line on stderr.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 1.
    Validation(String),
    /// Failed computation: exit code 2.
    Runtime(String),
}

impl From<wildisp::Error> for CliError {
    fn from(e: wildisp::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl CliError {
    fn report(&self) -> ExitCode {
        let (kind, code, reason) = match self {
            CliError::Validation(r) => ("validation", 1, r),
            CliError::Runtime(r) => ("runtime", 2, r),
        };
        let line = serde_json::json!({ "error": kind, "code": code, "reason": reason });
        eprintln!("{line}");
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let reason = e.to_string();
            let first = reason.lines().next().unwrap_or("invalid arguments");
            return CliError::Validation(first.trim_start_matches("error: ").to_string()).report();
        }
    };
    logging::init(cli.log_level.into());
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        return CliError::Runtime(format!("thread pool: {e}")).report();
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
