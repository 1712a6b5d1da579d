//! Data tables, their CSV/JSON encodings and the hashed manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => v.to_string(),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Header `time, x1..., x2..., regime, event_type` for state dimension `d`.
    pub fn states(name: impl Into<String>, d: usize) -> Self {
        let mut header = vec!["time".to_string()];
        for part in ["x1", "x2"] {
            if d == 1 {
                header.push(part.to_string());
            } else {
                header.extend((1..=d).map(|i| format!("{part}_{i}")));
            }
        }
        header.push("regime".into());
        header.push("event_type".into());
        Table {
            name: name.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push_state(&mut self, time: f64, x: &[f64], regime: usize, event: &str) {
        let mut row: Vec<Cell> = Vec::with_capacity(x.len() + 3);
        row.push(time.into());
        row.extend(x.iter().map(|&v| Cell::Num(v)));
        row.push(regime.into());
        row.push(event.into());
        self.rows.push(row);
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn encode(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(Vec::new());
                let io = |e: csv::Error| CliError::Runtime(format!("output: {e}"));
                w.write_record(&self.header).map_err(io)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Cell::render)).map_err(io)?;
                }
                w.into_inner().map_err(|e| CliError::Runtime(format!("output: {e}")))
            }
            Format::Json => {
                let rows: Vec<Map<String, Value>> = self
                    .rows
                    .iter()
                    .map(|r| {
                        self.header
                            .iter()
                            .cloned()
                            .zip(r.iter().map(|c| serde_json::to_value(c).expect("cells serialize")))
                            .collect()
                    })
                    .collect();
                to_json_bytes(&rows)
            }
        }
    }

    fn file_name(&self, format: Format) -> String {
        match format {
            Format::Csv => format!("{}.csv", self.name),
            Format::Json => format!("{}.json", self.name),
        }
    }
}

pub fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::Runtime(format!("output: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files into one output directory and remembers their hashes.
pub struct OutputDir {
    root: PathBuf,
    pub files: Vec<FileRecord>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| {
            CliError::Runtime(format!("output_dir: cannot create {}: {e}", root.display()))
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("output_dir: cannot write {}: {e}", path.display())))?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_table(&mut self, t: &Table, format: Format) -> Result<(), CliError> {
        let bytes = t.encode(format)?;
        self.write(&t.file_name(format), &bytes)
    }
}
