use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use smpd_core::report::format_float;

#[derive(Clone, Debug)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => format_float(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::S(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

#[derive(Clone, Debug)]
pub struct Column {
    pub name: String,
    pub unit: &'static str,
    pub description: String,
}

pub fn col(name: &str, unit: &'static str, description: &str) -> Column {
    Column { name: name.to_string(), unit, description: description.to_string() }
}

/// One CSV artifact. `name = None` is the experiment's main table.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: Option<&'static str>,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: Option<&'static str>, columns: Vec<Column>) -> Self {
        Self { name, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self, hash: &str) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        let _ = writeln!(s, "{},config_hash", names.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{},{hash}", cells.join(","));
        }
        s
    }

    fn dictionary(&self, file: &str, hash: &str) -> Value {
        let mut cols: Vec<Value> =
            self.columns.iter().map(|c| json!({"name": c.name, "unit": c.unit, "description": c.description})).collect();
        cols.push(json!({"name": "config_hash", "unit": "", "description": "hash of the resolved config snapshot"}));
        json!({"file": file, "config_hash": hash, "columns": cols})
    }
}

/// Result of one experiment run before it is written out.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Map<String, Value>,
    /// Extra binary artifacts: (file stem suffix, bytes).
    pub blobs: Vec<(&'static str, Vec<u8>)>,
}

impl Outcome {
    pub fn put(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    /// Float summary entry; non-finite values become `null`.
    pub fn num(&mut self, key: &str, x: f64) {
        self.put(key, if x.is_finite() { json!(x) } else { Value::Null });
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s.into_bytes()
}

/// Writes snapshot, tables, column dictionaries and summary; returns paths.
pub fn write_outcome(dir: &Path, experiment: &str, hash: &str, snapshot: &Value, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let snap_path = dir.join(format!("config_{hash}.json"));
    let mut snap = snapshot.clone();
    snap.as_object_mut().expect("snapshot is an object").insert("config_hash".into(), json!(hash));
    write(&snap_path, &pretty(&snap))?;
    written.push(snap_path);
    for t in &outcome.tables {
        let stem = match t.name {
            None => format!("{experiment}_{hash}"),
            Some(n) => format!("{experiment}_{n}_{hash}"),
        };
        let csv = dir.join(format!("{stem}.csv"));
        write(&csv, t.to_csv(hash).as_bytes())?;
        let dict = dir.join(format!("{stem}.columns.json"));
        write(&dict, &pretty(&t.dictionary(&format!("{stem}.csv"), hash)))?;
        written.push(csv);
        written.push(dict);
    }
    for (suffix, bytes) in &outcome.blobs {
        let p = dir.join(format!("{experiment}_{hash}.{suffix}"));
        write(&p, bytes)?;
        written.push(p);
    }
    let mut summary = outcome.summary.clone();
    summary.insert("experiment".into(), json!(experiment));
    summary.insert("config_hash".into(), json!(hash));
    let sp = dir.join(format!("{experiment}_{hash}_summary.json"));
    write(&sp, &pretty(&Value::Object(summary)))?;
    written.push(sp);
    Ok(written)
}

/// Writes a bare table (no snapshot) with its dictionary.
pub fn write_table(dir: &Path, stem: &str, hash: &str, table: &Table) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join(format!("{stem}.csv"));
    write(&csv, table.to_csv(hash).as_bytes())?;
    write(&dir.join(format!("{stem}.columns.json")), &pretty(&table.dictionary(&format!("{stem}.csv"), hash)))?;
    Ok(csv)
}
