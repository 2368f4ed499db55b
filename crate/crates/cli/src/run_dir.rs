//! Per-run output directories.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::args::{Cli, OutputArgs};
use crate::{CliError, RUNS_DIR_ENV};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    ptn_core::PtnError::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

/// Creates the run directory. An existing non-empty directory is only
/// reused with `--force`; its artifacts are then overwritten in place.
pub fn prepare(subcommand: &str, out: &OutputArgs) -> Result<PathBuf, CliError> {
    let dir = match &out.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(RUNS_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| "runs".into());
            let stamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            root.join(format!("{subcommand}-{stamp}"))
        }
    };
    if dir.exists() {
        let occupied = std::fs::read_dir(&dir)
            .map_err(|e| io_error(&dir, e))?
            .next()
            .is_some();
        if occupied && !out.force {
            return Err(CliError::usage(format!(
                "run directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

pub fn write_config(dir: &Path, cli: &Cli) -> Result<(), CliError> {
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(cli)
        .map_err(|e| CliError::usage(format!("config serialization: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Opens an empty metrics file (truncating one left by a previous run).
pub fn metrics_writer(dir: &Path) -> Result<ptn_core::MetricsWriter, CliError> {
    let path = dir.join(METRICS_FILE);
    std::fs::File::create(&path).map_err(|e| io_error(&path, e))?;
    Ok(ptn_core::MetricsWriter::open(&path)?)
}
