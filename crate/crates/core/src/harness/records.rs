//! CSV and JSON files written by the experiment pipeline.
//!
//! Every CSV starts with a `# schema: <name> v<version>` comment line
//! followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MlpfError, Result};
use crate::models::Observation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub series: usize,
    pub n: usize,
    pub t: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub series: usize,
    pub n: usize,
    pub t: f64,
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub series: usize,
    pub n: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub model: String,
    pub algorithm: String,
    pub com: bool,
    pub level: u32,
    #[serde(rename = "N")]
    pub particles: usize,
    pub series: usize,
    pub repeat: usize,
    pub observation: usize,
    /// `filter` (single level), `difference` or `fine_filter`.
    pub estimate_kind: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub algorithm: String,
    pub com: bool,
    pub level: u32,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "W_seconds")]
    pub w_seconds: Option<f64>,
    #[serde(rename = "V_base")]
    pub v_base: Option<f64>,
    #[serde(rename = "W_base")]
    pub w_base: Option<f64>,
    pub rate_v: f64,
    pub rate_b: f64,
    pub rate_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRow {
    pub model: String,
    pub algorithm: String,
    pub com: bool,
    pub k: usize,
    pub epsilon: f64,
    pub series: usize,
    pub l0: u32,
    #[serde(rename = "L")]
    pub l_max: u32,
    pub estimate: f64,
    pub reference: f64,
    pub error: f64,
    pub wall_time: f64,
}

/// Columns that hold wall-clock measurements and differ between otherwise
/// identical runs.
pub const TIMING_COLUMNS: &[&str] = &["W_seconds", "wall_time"];

pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# schema: {schema} v{SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(MlpfError::from))
        .collect()
}

/// Header and rows of a CSV file with the timing columns removed, for
/// comparing runs that should agree up to wall-clock measurements.
pub fn read_csv_without_timing(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = r.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| !TIMING_COLUMNS.contains(&&headers[i]))
        .collect();
    let mut out = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec?;
        out.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

pub fn data_rows(series: usize, obs: &[Observation]) -> Vec<DataRow> {
    obs.iter()
        .map(|o| DataRow {
            series,
            n: o.index,
            t: o.time,
            y: o.y,
        })
        .collect()
}

/// Group data rows back into per-series observation lists, ordered by series
/// and observation index.
pub fn observations_from_rows(rows: &[DataRow], delta: f64) -> Result<Vec<Vec<Observation>>> {
    let n_series = rows.iter().map(|r| r.series + 1).max().unwrap_or(0);
    let mut out: Vec<Vec<Observation>> = vec![Vec::new(); n_series];
    for r in rows {
        out[r.series].push(Observation {
            index: r.n,
            time: r.t,
            y: r.y,
        });
    }
    for (s, obs) in out.iter_mut().enumerate() {
        obs.sort_by_key(|o| o.index);
        if obs.is_empty() {
            return Err(MlpfError::InvalidInput(format!(
                "series {s} has no observations"
            )));
        }
        for (k, o) in obs.iter().enumerate() {
            if o.index != k + 1 || (o.time - o.index as f64 * delta).abs() > 1e-9 * o.time.max(1.0)
            {
                return Err(MlpfError::InvalidInput(format!(
                    "series {s}: observation {} at t = {} breaks the δ = {delta} grid",
                    o.index, o.time
                )));
            }
        }
    }
    Ok(out)
}
