//! Crash-safe JSONL persistence.
//!
//! Two write disciplines cover every artifact:
//!
//! - *Append logs* (traces, BoN runs): one `write` call per complete line on
//!   a file opened in append mode, so a line is either fully present or
//!   absent. A process killed mid-write leaves at most one torn final line,
//!   which the reader drops when the file lacks a trailing newline.
//! - *Dataset exports* (distillation records, episodes, metrics inputs):
//!   written to `<path>.partial` and atomically renamed into place, so the
//!   final path never holds a half-written file. An aborted export leaves
//!   the `.partial` file behind as the failure marker.
//!
//! Lines starting with `#` are headers/comments and are skipped on read.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, VrError};
use crate::{ENGINE_VERSION, SCHEMA_VERSION};

/// Append-mode writer emitting one complete JSON line per record.
pub struct JsonlWriter {
    path: PathBuf,
    file: File,
}

impl JsonlWriter {
    /// Open for appending, creating the file (and parent directories) on
    /// first use.
    pub fn append_to(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| VrError::io(parent, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| VrError::io(&path, e))?;
        Ok(JsonlWriter { path, file })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        // One write call for the whole line keeps concurrent-reader views
        // and crash remnants line-atomic.
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| VrError::io(&self.path, e))?;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data().map_err(|e| VrError::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Read an append log. Blank lines and `#` comments are skipped; a torn
/// final line (malformed and missing its trailing newline — the remnant of
/// an interrupted append) is dropped. Malformed *complete* lines are errors.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| VrError::io(path, e))?;
    parse_lines(path, &text)
}

/// Like [`read_jsonl`], but an absent file is an empty log.
pub fn read_jsonl_or_empty<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

fn parse_lines<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    let ends_with_newline = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match serde_json::from_str::<T>(trimmed) {
            Ok(v) => out.push(v),
            Err(e) => {
                let is_last = i + 1 == lines.len();
                if is_last && !ends_with_newline {
                    log::warn!(
                        "dropping torn trailing line in {} (interrupted append)",
                        path.display()
                    );
                    continue;
                }
                return Err(VrError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Export records as a headered JSONL dataset, atomically. The data lands
/// at `<path>.partial` first and is renamed over `path` only after a
/// successful sync, so consumers never observe a truncated dataset.
pub fn write_dataset<T: Serialize>(path: &Path, kind: &str, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| VrError::io(parent, e))?;
        }
    }
    let partial = partial_path(path);
    let file = File::create(&partial).map_err(|e| VrError::io(&partial, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "# vrloop dataset kind={kind} schema_version={SCHEMA_VERSION} count={} engine_version={ENGINE_VERSION}\n",
        records.len()
    );
    w.write_all(header.as_bytes())
        .map_err(|e| VrError::io(&partial, e))?;
    for r in records {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| VrError::io(&partial, e))?;
    }
    let file = w
        .into_inner()
        .map_err(|e| VrError::io(&partial, e.into_error()))?;
    file.sync_data().map_err(|e| VrError::io(&partial, e))?;
    std::fs::rename(&partial, path).map_err(|e| VrError::io(path, e))?;
    Ok(())
}

/// Read a dataset export. Unlike append logs these are written atomically,
/// so every line must parse; any malformed line is corruption.
pub fn read_dataset<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| VrError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(
            serde_json::from_str::<T>(trimmed).map_err(|e| VrError::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Atomically write a whole file (used for manifests and CSVs): write to
/// the partial marker path, sync, rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| VrError::io(parent, e))?;
        }
    }
    let partial = partial_path(path);
    let mut file = File::create(&partial).map_err(|e| VrError::io(&partial, e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| VrError::io(&partial, e))?;
    file.sync_data().map_err(|e| VrError::io(&partial, e))?;
    std::fs::rename(&partial, path).map_err(|e| VrError::io(path, e))?;
    Ok(())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".partial");
    PathBuf::from(os)
}
