//! Result tables, CSV emission and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cli::config::ExperimentConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(x) => Some(*x),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_nan() => "nan".into(),
            Cell::Float(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Float(x) => format!("{x:?}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// A named table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Range(format!("no column {name} in table {}", self.name)))
    }

    /// Numeric column; text cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_f64().unwrap_or(f64::NAN)).collect())
    }

    /// Rows where every `(column, value)` pair matches.
    pub fn filter(&self, keys: &[(&str, Cell)]) -> Result<Table> {
        let idx = keys
            .iter()
            .map(|(c, v)| Ok((self.column_index(c)?, v)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Table::new(self.name.clone(), &self.columns);
        for r in &self.rows {
            if idx.iter().all(|(i, v)| &r[*i] == *v) {
                out.rows.push(r.clone());
            }
        }
        Ok(out)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(format!("csv output: {e}"));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(format!("csv output: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub name: &'a str,
    pub version: &'static str,
    pub parallel: bool,
    pub seed: u64,
    pub trials: usize,
    pub files: Vec<String>,
    pub wall_time_s: f64,
    pub config: &'a ExperimentConfig,
}

/// Marker present while a run is in progress or after it failed.
pub fn partial_marker(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.partial"))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("writing {}: {e}", path.display()))
}

pub fn begin_run(dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let marker = partial_marker(dir, name);
    fs::write(&marker, b"run in progress or failed\n").map_err(|e| io_err(&marker, e))
}

/// Write every table as `<table>.csv`, then the manifest, then drop the marker.
pub fn finish_run(dir: &Path, cfg: &ExperimentConfig, tables: &[Table], wall_time_s: f64) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        t.write_csv(std::io::BufWriter::new(f))?;
        written.push(path);
    }
    let manifest = Manifest {
        name: &cfg.name,
        version: env!("CARGO_PKG_VERSION"),
        parallel: cfg!(feature = "parallel"),
        seed: cfg.seed,
        trials: cfg.trials,
        files: tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
        wall_time_s,
        config: cfg,
    };
    let path = dir.join(format!("{}.manifest.json", cfg.name));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    written.push(path);
    let marker = partial_marker(dir, &cfg.name);
    fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
    Ok(written)
}
