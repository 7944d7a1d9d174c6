//! Artifacts on disk: tables as CSV or JSON lines, reports as JSON, each
//! written atomically and accompanied by a manifest.

use crate::config::{Format, RunConfig};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// CSV text. Floats carry 17 significant digits, enough to round-trip.
    pub fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) if v.is_finite() => (*v).into(),
            Cell::Float(v) => v.to_string().into(),
            Cell::Text(s) => s.clone().into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn encode(&self, format: Format) -> std::io::Result<Vec<u8>> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.header)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(Cell::csv))?;
                }
                w.into_inner().map_err(|e| e.into_error())
            }
            Format::Jsonl => {
                let mut buf = Vec::new();
                for r in &self.rows {
                    let obj: serde_json::Map<String, serde_json::Value> =
                        self.header.iter().cloned().zip(r.iter().map(Cell::json)).collect();
                    serde_json::to_writer(&mut buf, &obj)?;
                    buf.push(b'\n');
                }
                Ok(buf)
            }
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'a str,
    command: &'a str,
    seed: u64,
    format: Format,
    rsde_version: &'a str,
    created_unix_s: u64,
    wall_time_s: f64,
    config: &'a str,
}

/// Writes artifacts into one directory for one run.
pub struct Sink<'a> {
    dir: PathBuf,
    config: &'a RunConfig,
    started: Instant,
    pub written: Vec<PathBuf>,
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl<'a> Sink<'a> {
    pub fn new(config: &'a RunConfig, started: Instant) -> std::io::Result<Self> {
        std::fs::create_dir_all(&config.out)?;
        Ok(Self {
            dir: config.out.clone(),
            config,
            started,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(name);
        atomic_write(&path, bytes)?;
        let manifest = Manifest {
            artifact: name,
            command: self.config.invocation.name(),
            seed: self.config.seed,
            format: self.config.format,
            rsde_version: env!("CARGO_PKG_VERSION"),
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config: &self.config.text,
        };
        let mut m = serde_json::to_vec_pretty(&manifest)?;
        m.push(b'\n');
        atomic_write(&self.dir.join(format!("{name}.manifest.json")), &m)?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// `<stem>.csv` or `<stem>.jsonl`, by the configured format.
    pub fn table(&mut self, stem: &str, table: &Table) -> std::io::Result<PathBuf> {
        let name = format!("{stem}.{}", self.config.format.extension());
        self.write(&name, &table.encode(self.config.format)?)
    }

    pub fn report<T: Serialize>(&mut self, stem: &str, report: &T) -> std::io::Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(report)?;
        bytes.push(b'\n');
        self.write(&format!("{stem}.json"), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 5e-324] {
            let s = Cell::Float(v).csv();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn jsonl_rows_carry_the_header_keys() {
        let mut t = Table::new(vec!["tau".into(), "n".into()]);
        t.push(vec![Cell::Float(0.1), Cell::Int(3)]);
        let text = String::from_utf8(t.encode(Format::Jsonl).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["tau"], 0.1);
        assert_eq!(v["n"], 3);
    }
}
