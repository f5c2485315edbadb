//! Stage artifacts: JSON, and JSONL with a leading manifest line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const STIMULI_FILE: &str = "stimuli.jsonl";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const CONGRUENCY_FILE: &str = "congruency_report.json";
pub const PROBE_FILE: &str = "probe_report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SVG_FILE: &str = "summary.svg";

/// Bias table and correlation report names, raw or discounted.
pub fn bias_files(discounted: bool) -> (&'static str, &'static str) {
    if discounted {
        (
            "bias_results.discounted.csv",
            "correlation_report.discounted.json",
        )
    } else {
        ("bias_results.csv", "correlation_report.json")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    manifest: String,
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write through a temporary file so a failed stage leaves no half file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let tmp = tmp_path(path);
    let mut w = BufWriter::new(File::create(&tmp).map_err(wrap)?);
    fill(&mut w).map_err(wrap)?;
    w.into_inner()
        .map_err(|e| wrap(e.into_error()))?
        .sync_all()
        .map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, manifest: &str, items: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        let header = Header {
            manifest: manifest.to_string(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        writeln!(w)?;
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

fn open(path: &Path, hint: &'static str) -> Result<File> {
    File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput {
                path: path.to_path_buf(),
                hint,
            }
        } else {
            CliError::Read {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, hint: &'static str) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path, hint)?)).map_err(|e| CliError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Read a JSONL artifact, requiring its header to carry `manifest`.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    manifest: &str,
    hint: &'static str,
) -> Result<Vec<T>> {
    let malformed = |line: usize, message: String| CliError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(open(path, hint)?).lines();
    let read_err = |source| CliError::Read {
        path: path.to_path_buf(),
        source,
    };
    let first = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?
        .map_err(read_err)?;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| malformed(1, format!("bad manifest line: {e}")))?;
    if header.manifest != manifest {
        return Err(CliError::Validation(format!(
            "{} belongs to manifest {}, not the current {}; rerun the earlier stage",
            path.display(),
            header.manifest,
            manifest
        )));
    }
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(read_err)?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| malformed(i + 2, e.to_string()))?);
    }
    Ok(items)
}
