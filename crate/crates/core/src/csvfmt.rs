//! Fixed-precision number formatting and atomic file writes shared by every
//! artifact writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Nine significant digits in scientific notation.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Shortest representation that parses back to the identical `f64`.
pub fn fmt_exact(x: f64) -> String {
    format!("{x:?}")
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Builds a CSV document in memory from a header and rows of pre-formatted
/// fields.
pub struct CsvDoc {
    buf: Vec<u8>,
}

impl CsvDoc {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut doc = Self { buf: Vec::new() };
        doc.push_fields(header.iter().map(|s| s.as_ref().to_string()));
        doc
    }

    pub fn push_fields<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let mut first = true;
        for f in fields {
            if !first {
                self.buf.push(b',');
            }
            first = false;
            self.buf.extend_from_slice(f.as_bytes());
        }
        self.buf.push(b'\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Sidecar path for an artifact: same path with a `.json` extension.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}
