//! Newline-delimited JSON metrics.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{PtnError, Result};
use crate::training::EpochRecord;

/// Appends one JSON object per line and flushes after every record.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Opens `path` for appending, creating it (empty) if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| PtnError::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        let line =
            serde_json::to_string(row).map_err(|e| PtnError::Data(format!("metrics row: {e}")))?;
        writeln!(self.out, "{line}").map_err(|e| PtnError::io(&self.path, e))?;
        self.out.flush().map_err(|e| PtnError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Appends `rows` to `path` as JSON lines (creating the file even when
/// `rows` is empty).
pub fn write_metrics(rows: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = MetricsWriter::open(path)?;
    for r in rows {
        w.write(r)?;
    }
    Ok(())
}
