//! Line-delimited JSON helpers shared by every on-disk format in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    pub line: usize,
    pub message: String,
}

/// Records read from a line-delimited file, with a tally of rejected lines.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub path: PathBuf,
    pub records: Vec<T>,
    pub malformed: Vec<Malformed>,
}

impl<T> Loaded<T> {
    pub fn malformed_count(&self) -> usize {
        self.malformed.len()
    }

    /// Fails on the first malformed line instead of tallying it.
    pub fn into_strict(self) -> Result<Vec<T>> {
        match self.malformed.into_iter().next() {
            Some(m) => Err(Error::Parse {
                path: self.path,
                line: m.line,
                message: m.message,
            }),
            None => Ok(self.records),
        }
    }
}

/// Reads `path` line by line. Blank lines are ignored; every other line must
/// deserialize into `T` and pass `validate`, or it is recorded as malformed
/// with its 1-based line number.
pub fn read_validated<T, F>(path: &Path, validate: F) -> Result<Loaded<T>>
where
    T: DeserializeOwned,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<T>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| validate(&rec).map(|_| rec));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(message) => malformed.push(Malformed {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok(Loaded {
        path: path.to_path_buf(),
        records,
        malformed,
    })
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>> {
    read_validated(path, |_| Ok(()))
}

pub fn write<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
