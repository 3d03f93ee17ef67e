//! CSV tables, JSON summaries, and the file plumbing around them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use consensus_core::dynamics::Trajectory;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Evenly spaced sample indices, first and last always included.
/// `max_rows == 0` keeps every sample.
pub fn thin_indices(len: usize, max_rows: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if max_rows == 0 || len <= max_rows {
        return (0..len).collect();
    }
    let stride = (len - 1).div_ceil(max_rows - 1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().expect("nonempty") != len - 1 {
        idx.push(len - 1);
    }
    idx
}

pub fn trajectory_header(n: usize, with_var_p: bool) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y_{i}")));
    header.push("weighted_mean".into());
    header.push("var_v".into());
    if with_var_p {
        header.push("var_P".into());
    }
    header.push("min_state".into());
    header.push("max_state".into());
    header
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

/// One row per kept sample; header only for an empty trajectory.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    n: usize,
    indices: &[usize],
) -> Result<(), CliError> {
    let with_var_p = traj.has_var_p();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(trajectory_header(n, with_var_p)).map_err(|e| csv_error(path, e))?;
    for &k in indices {
        let m = &traj.monitors[k];
        let mut row = Vec::with_capacity(n + 6);
        row.push(fmt_f64(traj.times[k]));
        row.extend(traj.states[k].iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(m.weighted_mean));
        row.push(fmt_f64(m.var_v));
        if with_var_p {
            row.push(fmt_f64(m.var_p.unwrap_or(f64::NAN)));
        }
        row.push(fmt_f64(m.min_state));
        row.push(fmt_f64(m.max_state));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|&x| fmt_f64(x))).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| CliError::Data {
                    path: path.to_path_buf(),
                    message: format!("`{s}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// JSON object builder that refuses non-finite numbers.
#[derive(Debug, Default)]
pub struct JsonObject {
    prefix: String,
    map: Map<String, Value>,
}

impl JsonObject {
    pub fn new() -> Self {
        Self::default()
    }

    /// Child object whose errors report `prefix.key`.
    pub fn child(&self, key: &str) -> Self {
        Self {
            prefix: self.path(key),
            map: Map::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn finite(&self, key: &str, x: f64) -> Result<Value, CliError> {
        if x.is_finite() {
            Ok(Value::from(x))
        } else {
            Err(CliError::NonFinite { field: self.path(key) })
        }
    }

    pub fn num(&mut self, key: &str, x: f64) -> Result<&mut Self, CliError> {
        let v = self.finite(key, x)?;
        self.map.insert(key.into(), v);
        Ok(self)
    }

    /// `None` becomes `null`.
    pub fn opt(&mut self, key: &str, x: Option<f64>) -> Result<&mut Self, CliError> {
        let v = match x {
            Some(x) => self.finite(key, x)?,
            None => Value::Null,
        };
        self.map.insert(key.into(), v);
        Ok(self)
    }

    pub fn nums<'a>(&mut self, key: &str, xs: impl IntoIterator<Item = &'a f64>) -> Result<&mut Self, CliError> {
        let values = xs
            .into_iter()
            .map(|&x| self.finite(key, x))
            .collect::<Result<Vec<_>, _>>()?;
        self.map.insert(key.into(), Value::Array(values));
        Ok(self)
    }

    pub fn put(&mut self, key: &str, v: impl Into<Value>) -> &mut Self {
        self.map.insert(key.into(), v.into());
        self
    }

    pub fn build(self) -> Value {
        Value::Object(self.map)
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}
