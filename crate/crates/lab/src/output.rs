//! Result files: per-run step CSV, event log, trace, learning curve and
//! summary JSON, the comparison table and the digest manifest.
//!
//! Every file except the manifest is a pure function of the run results,
//! so identical runs give identical bytes. Wall-clock durations appear in
//! the manifest only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::runner::{RunOutput, RunResult};
use crate::scenario::SCHEMA_VERSION;
use crate::sweep::ComparisonRow;

#[derive(Debug, thiserror::Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

/// Step CSV columns, in order.
pub const STEP_COLUMNS: [&str; 10] = [
    "t",
    "intersection",
    "queue",
    "actual_delay",
    "stops",
    "cumulative_delay",
    "vehicle_count",
    "cumulative_travel_time",
    "delta_cumulative_delay",
    "cost",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTiming {
    pub dir: String,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub files: Vec<ManifestEntry>,
    pub timings: Vec<RunTiming>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    #[serde(flatten)]
    result: &'a RunResult,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_bytes<T: Serialize>(rows: &[T], header: Option<&[&str]>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("rows serialise");
    }
    w.into_inner().expect("in-memory flush")
}

fn jsonl_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("rows serialise");
        out.push(b'\n');
    }
    out
}

fn json_bytes<T: Serialize>(doc: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("document serialises");
    out.push(b'\n');
    out
}

/// Writes `bytes` under `root`, records its digest and returns nothing else.
struct Writer<'a> {
    root: &'a Path,
    entries: Vec<ManifestEntry>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &Path, bytes: &[u8]) -> Result<(), OutputError> {
        let full = self.root.join(rel);
        if let Some(dir) = full.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut f = fs::File::create(&full).map_err(io_err(&full))?;
        f.write_all(bytes).map_err(io_err(&full))?;
        self.entries.push(ManifestEntry { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }
}

/// Writes every run's files and, when given, the comparison table; then
/// the manifest (`manifest.json`) listing each file with its digest.
pub fn write_results(runs: &[RunOutput], comparison: Option<&[ComparisonRow]>, out: &Path) -> Result<Manifest, OutputError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut w = Writer { root: out, entries: Vec::new() };
    for run in runs {
        let r = &run.result;
        let header = run.steps.is_empty().then_some(&STEP_COLUMNS[..]);
        w.put(&r.steps_file, &csv_bytes(&run.steps, header))?;
        w.put(&r.events_file, &jsonl_bytes(&run.events))?;
        if let Some(p) = &r.trace_file {
            w.put(p, &jsonl_bytes(&run.trace))?;
        }
        if let Some(p) = &r.curve_file {
            w.put(p, &csv_bytes(&run.curve, None))?;
        }
        w.put(&r.dir.join("summary.json"), &json_bytes(&Summary { schema_version: SCHEMA_VERSION, result: r }))?;
    }
    if let Some(rows) = comparison.filter(|_| !runs.is_empty()) {
        w.put(Path::new("comparison.csv"), &csv_bytes(rows, None))?;
    }
    let mut files = w.entries;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let timings =
        runs.iter().map(|r| RunTiming { dir: r.result.dir.to_string_lossy().replace('\\', "/"), wall_clock_s: r.result.wall_clock_s }).collect();
    let manifest = Manifest { schema_version: SCHEMA_VERSION, files, timings };
    let path = out.join("manifest.json");
    fs::write(&path, json_bytes(&manifest)).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Recomputes every manifest digest from disk; returns the paths that differ.
pub fn verify_manifest(manifest: &Manifest, out: &Path) -> Result<Vec<String>, OutputError> {
    let mut bad = Vec::new();
    for e in &manifest.files {
        let full = out.join(&e.path);
        let bytes = fs::read(&full).map_err(io_err(&full))?;
        if sha256_hex(&bytes) != e.sha256 || bytes.len() as u64 != e.bytes {
            bad.push(e.path.clone());
        }
    }
    Ok(bad)
}
