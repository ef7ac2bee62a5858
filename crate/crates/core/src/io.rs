//! Line-delimited JSON and small file helpers shared by every stage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: file contains no records")]
    Empty { path: PathBuf },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads one JSON object per line. Blank lines are skipped; an empty file is
/// an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let rows = read_jsonl_allow_empty(path)?;
    if rows.is_empty() {
        return Err(IoError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(rows)
}

pub fn read_jsonl_allow_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|source| IoError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_jsonl<'a, T, I>(path: &Path, rows: I) -> Result<(), IoError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("records serialize to JSON");
        writeln!(out, "{line}").map_err(|e| IoError::io(path, e))?;
    }
    out.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), IoError> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| IoError::io(path, e))
}

pub fn ensure_parent(path: &Path) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| IoError::io(parent, e))?;
        }
    }
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Renders rows as a tab-separated table with a header line.
pub fn tsv<S: AsRef<str>>(header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        let cells: Vec<&str> = row.iter().map(|c| c.as_ref()).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}
