//! Delimited integer tables (the density-estimation benchmark format).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::dataset::{DiscreteDataset, Split};
use crate::error::{PtnError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    /// Comma if the first data line contains one, whitespace otherwise.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Delimiter::Auto => "auto",
            Delimiter::Comma => "comma",
            Delimiter::Whitespace => "whitespace",
        })
    }
}

impl FromStr for Delimiter {
    type Err = PtnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Comma),
            "whitespace" | "space" | " " => Ok(Delimiter::Whitespace),
            other => Err(PtnError::Argument(format!("unknown delimiter '{other}'"))),
        }
    }
}

/// Reads a file of delimiter-separated non-negative integers. Cardinalities
/// are inferred as `max + 1` per column; widen them afterwards with
/// [`DiscreteDataset::with_dims`].
pub fn load_csv01(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<DiscreteDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PtnError::io(path, e))?;
    parse_csv01(&text, delimiter, path)
}

/// [`load_csv01`] on in-memory text; `path` is used in error messages.
pub fn parse_csv01(text: &str, delimiter: Delimiter, path: &Path) -> Result<DiscreteDataset> {
    let err = |line: usize, msg: String| PtnError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut delim = delimiter;
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if delim == Delimiter::Auto {
            delim = if line.contains(',') {
                Delimiter::Comma
            } else {
                Delimiter::Whitespace
            };
        }
        let tokens: Vec<&str> = match delim {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            _ => line.split_whitespace().collect(),
        };
        let row = tokens
            .iter()
            .enumerate()
            .map(|(c, t)| {
                t.parse::<usize>().map_err(|_| {
                    err(
                        line_no,
                        format!("column {}: '{t}' is not a non-negative integer", c + 1),
                    )
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(err(
                    line_no,
                    format!("expected {w} values, found {}", row.len()),
                ));
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    let mut dims = vec![1usize; width];
    for row in &rows {
        for (d, &v) in dims.iter_mut().zip(row) {
            *d = (*d).max(v + 1);
        }
    }
    DiscreteDataset::new(rows, dims, Split::Train)
}
