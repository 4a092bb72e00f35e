//! Line-delimited JSON helpers. Blank lines are skipped; errors carry the
//! 1-based line number.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub fn read_to_string(path: &Path) -> Result<String, JsonlError> {
    fs::read_to_string(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-blank lines with their 1-based line numbers.
pub fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, JsonlError> {
    numbered_lines(text)
        .map(|(line, l)| {
            serde_json::from_str(l).map_err(|e| JsonlError::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    parse_lines(&read_to_string(path)?)
}

/// One compact JSON object per line, each terminated by `\n`.
pub fn to_string<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
