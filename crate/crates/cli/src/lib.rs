//! `ptn` command-line driver.
//!
//! Every invocation writes into a run directory holding `config.json` (the
//! parsed invocation), `metrics.jsonl` and the subcommand's artifacts. On
//! success a one-line JSON summary goes to stdout; on failure a one-line JSON
//! error goes to stderr and the exit code classifies it:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | usage or configuration error |
//! | 3 | data error (missing/malformed input, checkpoint, I/O) |
//! | 4 | numerical failure (overflow, zero amplitude, SVD) |

pub mod args;
mod commands;
mod run_dir;

use std::ffi::OsString;

use clap::Parser;
use ptn_core::PtnError;
use serde_json::json;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Environment variable naming the default root for run directories.
pub const RUNS_DIR_ENV: &str = "PTN_RUNS_DIR";

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            kind: "numerical",
            message: message.into(),
        }
    }

    fn to_json_line(&self) -> String {
        json!({"error": self.kind, "exit_code": self.code, "message": self.message}).to_string()
    }
}

impl From<PtnError> for CliError {
    fn from(e: PtnError) -> Self {
        let (code, kind) = if e.is_numerical() {
            (EXIT_NUMERICAL, "numerical")
        } else if matches!(e, PtnError::Argument(_) | PtnError::Unsupported(_)) {
            (EXIT_USAGE, "usage")
        } else {
            (EXIT_DATA, "data")
        };
        Self {
            code,
            kind,
            message: e.to_string().replace('\n', " "),
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.to_json_line());
            return err.code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            err.code
        }
    }
}

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    commands::check(&cli.command)?;
    let dir = run_dir::prepare(cli.command.name(), cli.command.output())?;
    run_dir::write_config(&dir, cli)?;
    commands::dispatch(&cli.command, &dir)
}
