//! File formats: event CSVs with JSON sidecars, state and report JSON, and
//! trace CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::sim::{EventLabel, EventSet};
use crate::training::{TraceRow, TrainTrace};

/// Metadata stored next to an event CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub domain: BoxDomain,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_integral: Option<f64>,
}

/// `events.csv` → `events.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_events_csv(path: &Path, events: &EventSet) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let dim = events.domain().dim();
    let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..events.len() {
        let row: Vec<String> = events.point(i).iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read events, checking the header against the domain's dimension and
/// every point against its bounds.
pub fn read_events_csv(path: &Path, domain: &BoxDomain) -> Result<EventSet> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let dim = domain.dim();
    let expected: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(1, format!("expected header {}, found {}", expected.join(","), got.join(","))));
    }
    let mut values = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim {
            return Err(parse_err(line, format!("expected {dim} columns, found {}", record.len())));
        }
        let mut point = Vec::with_capacity(dim);
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite coordinate {field:?}")));
            }
            point.push(v);
        }
        if !domain.contains(&point) {
            return Err(Error::Data(format!(
                "{}:{line}: event {point:?} lies outside the domain {:?}..{:?}",
                path.display(),
                domain.lower(),
                domain.upper()
            )));
        }
        values.extend(point);
    }
    let n = values.len() / dim;
    let points = DMatrix::from_row_slice(n, dim, &values);
    EventSet::new(points, domain.clone(), EventLabel::Observed)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Events plus sidecar, reading the domain from the sidecar.
pub fn read_events_with_sidecar(path: &Path) -> Result<(EventSet, Sidecar)> {
    let side: Sidecar = read_json(&sidecar_path(path))?;
    let events = read_events_csv(path, &side.domain)?;
    Ok((events, side))
}

pub fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in &trace.rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    if trace.rows.is_empty() {
        w.write_record(["iteration", "elbo", "grad_norm", "seconds", "retries"])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}
