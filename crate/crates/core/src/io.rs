//! File formats.
//!
//! Rasters are CSV files whose first line is `# n1=<int> n2=<int>`, followed by
//! `n2` rows of `n1` comma-separated values (row `i2`, column `i1`). An empty
//! field is a missing value. Floats are written in shortest round-trip form, so
//! reading a written raster gives back the same bits.
//!
//! Point patterns are CSV files with an `x,y` header. A minute stack is either a
//! directory of rasters `frame_001.csv`, `frame_002.csv`, ... or one long CSV
//! with header `t,i1,i2,value` (`t` from 1, pixel indices from 0).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::covariates::MinuteStack;
use crate::error::{Result, SlemError};
use crate::grid::{CountGrid, PointPattern};
use crate::raster::Raster;

fn parse_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let bad = || SlemError::parse(path, format!("expected '# n1=<int> n2=<int>', found {line:?}"));
    let rest = line.trim().strip_prefix('#').ok_or_else(bad)?;
    let mut n1 = None;
    let mut n2 = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(bad)?;
        let v: usize = v.parse().map_err(|_| bad())?;
        match k {
            "n1" => n1 = Some(v),
            "n2" => n2 = Some(v),
            _ => return Err(bad()),
        }
    }
    Ok((n1.ok_or_else(bad)?, n2.ok_or_else(bad)?))
}

/// Reads a raster, mapping empty fields to `NaN`.
pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SlemError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SlemError::parse(path, "empty file"))?;
    let (n1, n2) = parse_header(path, header)?;
    let body: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if body.len() != n2 {
        return Err(SlemError::parse(path, format!("expected {n2} rows, found {}", body.len())));
    }
    let mut values = Vec::with_capacity(n1 * n2);
    for (r, line) in body.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n1 {
            return Err(SlemError::parse(
                path,
                format!("row {} has {} fields, expected {n1}", r + 1, fields.len()),
            ));
        }
        for f in fields {
            let f = f.trim();
            if f.is_empty() {
                values.push(f64::NAN);
            } else {
                let v: f64 = f
                    .parse()
                    .map_err(|_| SlemError::parse(path, format!("row {}: bad number {f:?}", r + 1)))?;
                values.push(v);
            }
        }
    }
    Raster::new(n1, n2, values)
}

fn format_raster<T>(n1: usize, n2: usize, values: &[T], fmt: impl Fn(&T) -> String) -> String {
    let mut out = format!("# n1={n1} n2={n2}\n");
    for row in values.chunks(n1).take(n2) {
        let cells: Vec<String> = row.iter().map(&fmt).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| SlemError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| SlemError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| SlemError::io(path, e))
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let text = format_raster(raster.n1(), raster.n2(), raster.values(), |v| {
        if v.is_nan() {
            String::new()
        } else {
            format!("{v}")
        }
    });
    write_text(path.as_ref(), &text)
}

/// Reads a raster of non-negative integer counts.
pub fn read_counts(path: impl AsRef<Path>) -> Result<CountGrid> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    let values = r
        .values()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
                Ok(v as u64)
            } else {
                Err(SlemError::parse(path, format!("{v} is not a non-negative integer count")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    CountGrid::new(r.n1(), r.n2(), values)
}

pub fn write_counts(path: impl AsRef<Path>, counts: &CountGrid) -> Result<()> {
    let text = format_raster(counts.n1(), counts.n2(), counts.values(), |v| v.to_string());
    write_text(path.as_ref(), &text)
}

fn csv_err(path: &Path, e: csv::Error) -> SlemError {
    SlemError::parse(path, e.to_string())
}

#[derive(serde::Deserialize, Serialize)]
struct PointRow {
    x: f64,
    y: f64,
}

pub fn read_points(path: impl AsRef<Path>) -> Result<PointPattern> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let points = rdr
        .deserialize::<PointRow>()
        .map(|r| r.map(|p| (p.x, p.y)).map_err(|e| csv_err(path, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointPattern::new(points))
}

pub fn write_points(path: impl AsRef<Path>, pattern: &PointPattern) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for &(x, y) in &pattern.points {
        wtr.serialize(PointRow { x, y }).map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| SlemError::parse(path, e.to_string()))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

#[derive(serde::Deserialize)]
struct StackRow {
    t: usize,
    i1: usize,
    i2: usize,
    value: Option<f64>,
}

/// Reads a minute stack from a frame directory or a long CSV. Pixels absent
/// from a long CSV are missing.
pub fn read_minute_stack(path: impl AsRef<Path>, n1: usize, n2: usize) -> Result<MinuteStack> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut frames = Vec::new();
        loop {
            let f = path.join(format!("frame_{:03}.csv", frames.len() + 1));
            if !f.exists() {
                break;
            }
            let r = read_raster(&f)?;
            if (r.n1(), r.n2()) != (n1, n2) {
                return Err(SlemError::parse(&f, format!("frame is {}x{}, expected {n1}x{n2}", r.n1(), r.n2())));
            }
            frames.push(r.into_values());
        }
        if frames.is_empty() {
            return Err(SlemError::parse(path, "no frame_001.csv in directory"));
        }
        return MinuteStack::new(n1, n2, frames);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for row in rdr.deserialize::<StackRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.t == 0 || row.i1 >= n1 || row.i2 >= n2 {
            return Err(SlemError::parse(
                path,
                format!("entry t={} i1={} i2={} is outside the {n1}x{n2} grid", row.t, row.i1, row.i2),
            ));
        }
        while frames.len() < row.t {
            frames.push(vec![f64::NAN; n1 * n2]);
        }
        frames[row.t - 1][row.i2 * n1 + row.i1] = row.value.unwrap_or(f64::NAN);
    }
    MinuteStack::new(n1, n2, frames)
}

pub fn write_minute_stack_dir(dir: impl AsRef<Path>, stack: &MinuteStack) -> Result<()> {
    for (t, f) in stack.frames().iter().enumerate() {
        let r = Raster::new(stack.n1(), stack.n2(), f.clone())?;
        write_raster(dir.as_ref().join(format!("frame_{:03}.csv", t + 1)), &r)?;
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SlemError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SlemError::parse(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path.as_ref(), &text)
}

/// Writes rows of named numeric columns as CSV.
pub fn write_table(path: impl AsRef<Path>, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        wtr.write_record(row.iter().map(|v| format!("{v}"))).map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| SlemError::parse(path, e.to_string()))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}
