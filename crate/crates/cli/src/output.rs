use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// A rectangular table for CSV output.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub passed: bool,
    pub message: String,
}

impl Check {
    pub fn new(passed: bool, message: impl Into<String>) -> Self {
        Self { passed, message: message.into() }
    }
}

/// Everything a subcommand produces. `payload` must depend only on the config and seed.
pub struct Outcome {
    pub payload: Value,
    pub table: Table,
    /// Extra files written verbatim, e.g. JSONL ledgers.
    pub extra: Vec<(String, String)>,
    pub check: Option<Check>,
    /// Non-deterministic or descriptive facts that belong in the manifest.
    pub notes: Value,
}

impl Outcome {
    pub fn new(payload: Value, table: Table) -> Self {
        Self { payload, table, extra: Vec::new(), check: None, notes: Value::Null }
    }

    pub fn with_check(mut self, check: Check) -> Self {
        self.check = Some(check);
        self
    }
}

fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the payload in the requested format plus any extra files, returning their names.
pub fn write_outputs(dir: &Path, name: &str, csv: bool, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let path = if csv {
        let p = dir.join(format!("{name}.csv"));
        write_csv(&p, &outcome.table)?;
        p
    } else {
        let p = dir.join(format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(&outcome.payload)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        p
    };
    files.push(path);
    for (file, content) in &outcome.extra {
        let p = dir.join(file);
        fs::write(&p, content).with_context(|| format!("writing {}", p.display()))?;
        files.push(p);
    }
    Ok(files)
}

pub fn write_manifest(dir: &Path, manifest: &Value) -> Result<PathBuf> {
    let p = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

pub fn num(x: f64) -> String {
    format!("{x}")
}
