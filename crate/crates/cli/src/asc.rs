//! Esri ASCII grid reader and writer.
//!
//! ```text
//! ncols 2
//! nrows 2
//! xllcorner 0
//! yllcorner 0
//! cellsize 1
//! NODATA_value -9999
//! 0.1 0.2
//! -9999 0.4
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use groundfail_core::{GridSpec, Raster};

use crate::error::CliError;

const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

/// Parse failure with a 1-based line and column.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}, column {col}: {msg}")]
pub struct AscError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> AscError {
    AscError { line, col, msg: msg.into() }
}

/// Whitespace-separated tokens with their 1-based starting columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split_whitespace()
        .map(move |t| (t.as_ptr() as usize - line.as_ptr() as usize + 1, t))
}

fn number(line: usize, col: usize, tok: &str) -> Result<f64, AscError> {
    tok.parse::<f64>()
        .map_err(|_| err(line, col, format!("expected a number, found `{tok}`")))
}

pub fn parse_ascii_grid(text: &str) -> Result<Raster, AscError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = [0.0f64; 6];
    for (k, key) in HEADER_KEYS.iter().enumerate() {
        let (n, line) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| err(text.lines().count() + 1, 1, format!("missing header key `{key}`")))?;
        let mut toks = tokens(line);
        let (c, found) = toks.next().expect("line is not blank");
        if !found.eq_ignore_ascii_case(key) {
            return Err(err(n, c, format!("unexpected header key `{found}`, expected `{key}`")));
        }
        let (vc, v) = toks
            .next()
            .ok_or_else(|| err(n, c + found.len(), format!("missing value for `{key}`")))?;
        if let Some((xc, extra)) = toks.next() {
            return Err(err(n, xc, format!("unexpected token `{extra}` after `{key}`")));
        }
        header[k] = number(n, vc, v)?;
        if k < 2 && (header[k] < 1.0 || header[k].fract() != 0.0) {
            return Err(err(n, vc, format!("`{key}` must be a positive integer, found `{v}`")));
        }
    }
    let spec = GridSpec::new(
        header[0] as usize,
        header[1] as usize,
        header[2],
        header[3],
        header[4],
        header[5],
    )
    .map_err(|e| err(6, 1, e.to_string()))?;

    let mut values = Vec::with_capacity(spec.len());
    let mut rows = 0;
    let mut last_line = 6;
    for (n, line) in lines {
        last_line = n;
        if line.trim().is_empty() {
            continue;
        }
        if rows == spec.nrows {
            return Err(err(n, 1, format!("more than {} data rows", spec.nrows)));
        }
        let mut count = 0;
        let mut end = 1;
        for (c, t) in tokens(line) {
            count += 1;
            if count > spec.ncols {
                return Err(err(n, c, format!("row has more than {} values", spec.ncols)));
            }
            let v = number(n, c, t)?;
            if !v.is_finite() {
                return Err(err(n, c, format!("non-finite value `{t}`")));
            }
            values.push(v);
            end = c + t.len();
        }
        if count < spec.ncols {
            return Err(err(n, end, format!("row has {count} values, expected {}", spec.ncols)));
        }
        rows += 1;
    }
    if rows < spec.nrows {
        return Err(err(last_line + 1, 1, format!("found {rows} data rows, expected {}", spec.nrows)));
    }
    Raster::new(spec, values).map_err(|e| err(7, 1, e.to_string()))
}

pub fn read_ascii_grid(path: &Path) -> Result<Raster, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_ascii_grid(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Fixed-point body with `decimals` digits; NODATA cells print the header's
/// `nodata_value`.
pub fn format_ascii_grid(raster: &Raster, decimals: usize) -> String {
    let s = &raster.spec;
    let mut out = String::with_capacity(s.len() * (decimals + 4) + 128);
    let _ = writeln!(out, "ncols {}", s.ncols);
    let _ = writeln!(out, "nrows {}", s.nrows);
    let _ = writeln!(out, "xllcorner {}", s.xllcorner);
    let _ = writeln!(out, "yllcorner {}", s.yllcorner);
    let _ = writeln!(out, "cellsize {}", s.cellsize);
    let _ = writeln!(out, "NODATA_value {}", s.nodata_value);
    for row in raster.values.chunks(s.ncols) {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            if raster.is_nodata(v) {
                let _ = write!(out, "{}", s.nodata_value);
            } else {
                let _ = write!(out, "{v:.decimals$}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(raster: &Raster, path: &Path, decimals: usize) -> Result<(), CliError> {
    fs::write(path, format_ascii_grid(raster, decimals)).map_err(|e| CliError::io(path, e))
}
