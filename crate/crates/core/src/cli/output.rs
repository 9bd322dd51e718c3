use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;

/// Version of the CSV column sets written by the CLI.
pub const CSV_SCHEMA: &str = "multirate-csv/1";

/// Round-trip decimal with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
    pub columns: Vec<String>,
}

/// Collects output files of one command and writes the manifest last.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(&row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.write(name, bytes, header.to_vec())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        self.write(name, bytes, Vec::new())
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>, columns: Vec<String>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
            columns,
        });
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, status: &str, body: serde_json::Value) -> Result<PathBuf, CliError> {
        let manifest = serde_json::json!({
            "tool": "multirate",
            "version": env!("CARGO_PKG_VERSION"),
            "csv_schema": CSV_SCHEMA,
            "command": command,
            "status": status,
            "run": body,
            "files": self.files,
        });
        let path = self.dir.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// `prefix_0 .. prefix_{n-1}`.
pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}
