//! Tables rendered as CSV with a comment header or as JSON, and atomic file writes.

use std::io::Write;
use std::path::Path;

use ion_readout::sweeps::{SweepRecord, SWEEP_CSV_HEADER};
use serde_json::{json, Map, Value};

use crate::config::Emit;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format!("{v:e}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// Column names and rows; the single source for both encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Provenance written into every output file.
#[derive(Debug, Clone)]
pub struct Meta {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    fn version() -> &'static str {
        env!("CARGO_PKG_VERSION")
    }
}

pub fn render(table: &Table, meta: &Meta, emit: Emit) -> Result<Vec<u8>, CliError> {
    match emit {
        Emit::Csv => {
            let mut out = format!(
                "# ion-readout {}\n# command={}\n# config_sha256={}\n# seed={}\n",
                Meta::version(),
                meta.command,
                meta.config_sha256,
                meta.seed
            )
            .into_bytes();
            {
                let mut w = csv::WriterBuilder::new().from_writer(&mut out);
                w.write_record(&table.columns).map_err(runtime)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(Cell::csv)).map_err(runtime)?;
                }
                w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            Ok(out)
        }
        Emit::Json => {
            let records: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = table
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::json))
                        .collect();
                    Value::Object(obj)
                })
                .collect();
            let doc = json!({
                "meta": {
                    "version": Meta::version(),
                    "command": meta.command,
                    "config_sha256": meta.config_sha256,
                    "seed": meta.seed,
                },
                "records": records,
            });
            let mut out = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

fn runtime(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", path.display()));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(fail)
}

/// Sweep records in the shared column layout.
pub fn sweep_table(records: &[SweepRecord]) -> Table {
    let columns: Vec<&str> = SWEEP_CSV_HEADER.split(',').collect();
    let mut t = Table::new(&columns);
    for r in records {
        let s = &r.stats;
        t.push(vec![
            Cell::Text(r.x_name.clone()),
            r.x_value.into(),
            Cell::Text(r.method.clone()),
            s.eps.into(),
            s.eps_95.lo.into(),
            s.eps_95.hi.into(),
            s.eps_b.into(),
            s.eps_d.into(),
            s.mean_ta.into(),
            s.mean_ta_bright.into(),
            s.mean_ta_dark.into(),
            Cell::Int(s.trials_bright.max(s.trials_dark)),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Meta {
        Meta {
            command: "histogram".into(),
            config_sha256: "ab".into(),
            seed: 7,
        }
    }

    #[test]
    fn csv_has_header_comments() {
        let mut t = Table::new(&["n", "p"]);
        t.push(vec![Cell::Int(0), Cell::Num(0.25)]);
        t.push(vec![Cell::Int(1), Cell::Empty]);
        let text = String::from_utf8(render(&t, &meta(), Emit::Csv).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# ion-readout "));
        assert_eq!(lines[3], "# seed=7");
        assert_eq!(&lines[4..], &["n,p", "0,2.5e-1", "1,"]);
    }

    #[test]
    fn json_mirrors_rows() {
        let mut t = Table::new(&["n", "p"]);
        t.push(vec![Cell::Int(3), Cell::Num(f64::NAN)]);
        let v: Value = serde_json::from_slice(&render(&t, &meta(), Emit::Json).unwrap()).unwrap();
        assert_eq!(v["meta"]["seed"], 7);
        assert_eq!(v["records"][0]["n"], 3);
        assert!(v["records"][0]["p"].is_null());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        std::fs::write(&path, "old").unwrap();
        write_atomic(&path, b"new").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
