#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{DateTime, Utc};

pub const BIN: &str = env!("CARGO_BIN_EXE_modlog");

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn example_inventory() -> PathBuf {
    workspace().join("crates/core/inventory/example.yaml")
}

pub fn example_scenario() -> PathBuf {
    workspace().join("crates/core/inventory/example-scenario.yaml")
}

pub fn modlog(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("MODLOG_LOG_LEVEL", "error")
        .output()
        .expect("modlog runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A parsed daily file. Panics on anything that is not well-formed: a
/// missing or repeated header, a torn last line, a row of the wrong width, or
/// an unparsable timestamp.
pub struct CsvFile {
    pub header: String,
    pub rows: Vec<Vec<String>>,
    pub timestamps: Vec<DateTime<Utc>>,
}

pub fn read_csv(path: &Path) -> CsvFile {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(text.ends_with('\n'), "{}: partial trailing line", path.display());
    let mut lines = text.split_terminator('\n');
    let header = lines.next().expect("header").to_string();
    assert!(header.starts_with("timestamp,") && header.ends_with(",status,error"), "bad header {header:?}");
    let width = header.split(',').count();
    let mut rows = Vec::new();
    let mut timestamps = Vec::new();
    for line in lines {
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        assert_eq!(cells.len(), width, "{}: malformed row {line:?}", path.display());
        let ts = DateTime::parse_from_rfc3339(&cells[0])
            .unwrap_or_else(|_| panic!("{}: bad timestamp in {line:?}", path.display()))
            .with_timezone(&Utc);
        assert!(cells[0].ends_with('Z'));
        assert!(["ok", "partial", "failed"].contains(&cells[width - 2].as_str()), "bad status in {line:?}");
        timestamps.push(ts);
        rows.push(cells);
    }
    CsvFile { header, rows, timestamps }
}

pub fn strictly_increasing(ts: &[DateTime<Utc>]) -> bool {
    ts.windows(2).all(|w| w[0] < w[1])
}

/// Every `*.csv` below `dir`, sorted.
pub fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Files in `dir`, recursively, for before/after comparisons.
pub fn all_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.push(p);
        }
    }
    out.sort();
    out
}
