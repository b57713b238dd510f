//! Ground-truth inventories: CSV with header `lon,lat,category`.

use std::fs::File;
use std::path::Path;

use groundfail_core::{HazardKind, InventoryPoint};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Deserialize)]
struct Row {
    lon: f64,
    lat: f64,
    category: String,
}

pub fn read_inventory(path: &Path) -> Result<Vec<InventoryPoint>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    if headers != vec!["lon", "lat", "category"] {
        return Err(CliError::Format(format!(
            "{}: expected header `lon,lat,category`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::Format(format!("{}: line {line}: {e}", path.display())))?;
        let category = HazardKind::parse(&row.category).ok_or_else(|| {
            CliError::Format(format!(
                "{}: line {line}: unknown category `{}`",
                path.display(),
                row.category
            ))
        })?;
        points.push(InventoryPoint {
            lon: row.lon,
            lat: row.lat,
            category,
        });
    }
    Ok(points)
}

/// Writes the header even when `points` is empty.
pub fn write_inventory(path: &Path, points: &[InventoryPoint]) -> Result<()> {
    let io = |e: csv::Error| CliError::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["lon", "lat", "category"]).map_err(io)?;
    for p in points {
        w.write_record([p.lon.to_string(), p.lat.to_string(), p.category.as_str().to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
