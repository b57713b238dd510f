//! Georeferenced grids and the map-level operations that feed inference.
//!
//! Rows are stored north to south (row 0 is the northernmost), columns west
//! to east, matching the Esri ASCII grid layout. Coordinates are planar.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::LocationRecord;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GridSpec {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata_value: f64,
}

impl GridSpec {
    pub fn new(
        ncols: usize,
        nrows: usize,
        xllcorner: f64,
        yllcorner: f64,
        cellsize: f64,
        nodata_value: f64,
    ) -> Result<Self> {
        let spec = GridSpec {
            ncols,
            nrows,
            xllcorner,
            yllcorner,
            cellsize,
            nodata_value,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        if (self.ncols as u128) * (self.nrows as u128) > (1u128 << 31) {
            return Err(Error::InvalidArgument("grid exceeds 2^31 cells".into()));
        }
        if !(self.cellsize > 0.0 && self.cellsize.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "cellsize must be positive, got {}",
                self.cellsize
            )));
        }
        if !(self.xllcorner.is_finite() && self.yllcorner.is_finite()) {
            return Err(Error::InvalidArgument("grid corner must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn xmax(&self) -> f64 {
        self.xllcorner + self.ncols as f64 * self.cellsize
    }

    pub fn ymax(&self) -> f64 {
        self.yllcorner + self.nrows as f64 * self.cellsize
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.ncols, index % self.ncols)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.xllcorner + (col as f64 + 0.5) * self.cellsize,
            self.ymax() - (row as f64 + 0.5) * self.cellsize,
        )
    }

    /// Cell containing a point; west and north edges belong to the cell.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = snapped_floor((x - self.xllcorner) / self.cellsize);
        let row = snapped_floor((self.ymax() - y) / self.cellsize);
        if col < 0.0 || row < 0.0 || col >= self.ncols as f64 || row >= self.nrows as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Same lattice: dimensions, corner and cell size (NODATA may differ).
    pub fn same_lattice(&self, other: &GridSpec) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.xllcorner == other.xllcorner
            && self.yllcorner == other.yllcorner
            && self.cellsize == other.cellsize
    }
}

/// `floor`, treating values within 1e-9 of an integer as that integer so
/// points on cell edges do not fall on the wrong side by rounding.
fn snapped_floor(f: f64) -> f64 {
    let r = libm::round(f);
    if libm::fabs(f - r) < 1e-9 {
        r
    } else {
        libm::floor(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub spec: GridSpec,
    /// Row-major, row 0 northernmost.
    pub values: Vec<f64>,
}

impl Raster {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        let r = Raster { spec, values };
        if r.values.iter().any(|v| !r.is_nodata(*v) && !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite raster value".into()));
        }
        Ok(r)
    }

    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Raster {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn nodata(spec: GridSpec) -> Self {
        Raster::filled(spec, spec.nodata_value)
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || v == self.spec.nodata_value
    }

    /// Value at a flat index, `None` for NODATA.
    #[inline]
    pub fn value(&self, index: usize) -> Option<f64> {
        let v = self.values[index];
        (!self.is_nodata(v)).then_some(v)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.value(self.spec.index(row, col))
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).filter_map(|i| self.value(i))
    }

    pub fn valid_count(&self) -> usize {
        self.valid_values().count()
    }

    /// `(min, max)` over non-NODATA cells.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Applies `f` to every non-NODATA value.
    pub fn map_valid<F: FnMut(f64) -> f64>(&self, mut f: F) -> Raster {
        let values = self
            .values
            .iter()
            .map(|&v| if self.is_nodata(v) { v } else { f(v) })
            .collect();
        Raster {
            spec: self.spec,
            values,
        }
    }
}

/// Nearest-neighbour resampling of `src` onto `target`.
///
/// Each target cell takes the source cell containing its centre. Target
/// cells whose centre lies outside the source, or on a NODATA source cell,
/// become NODATA.
pub fn align_to_grid(src: &Raster, target: &GridSpec) -> Result<Raster> {
    target.validate()?;
    let s = &src.spec;
    let disjoint = target.xmax() <= s.xllcorner
        || target.xllcorner >= s.xmax()
        || target.ymax() <= s.yllcorner
        || target.yllcorner >= s.ymax();
    if disjoint {
        return Err(Error::GridMismatch("source and target extents are disjoint".into()));
    }
    let mut out = Raster::nodata(*target);
    for row in 0..target.nrows {
        for col in 0..target.ncols {
            let (x, y) = target.cell_center(row, col);
            if let Some((sr, sc)) = s.locate(x, y) {
                if let Some(v) = src.get(sr, sc) {
                    out.values[target.index(row, col)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Rescales a raw damage-proxy raster into `[delta, 1]`.
///
/// Min-max rescaling to `[0, 1]` (skipped with `assume_normalized`), then a
/// clamp to `[delta, 1]` so `log(y + delta)` stays finite.
pub fn normalize_dpm(raw: &Raster, delta: f64, assume_normalized: bool) -> Result<Raster> {
    let (lo, hi) = raw
        .min_max()
        .ok_or(Error::Empty("damage-proxy raster has no data cells"))?;
    if assume_normalized {
        return Ok(raw.map_valid(|v| v.clamp(delta, 1.0)));
    }
    if hi <= lo {
        return Err(Error::InvalidArgument(alloc::format!(
            "damage-proxy raster is constant ({lo}); supply normalized values and set assume_normalized"
        )));
    }
    let range = hi - lo;
    Ok(raw.map_valid(|v| ((v - lo) / range).clamp(delta, 1.0)))
}

/// Ground-truth inventory categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HazardKind {
    Landslide,
    Liquefaction,
    BuildingDamage,
}

impl HazardKind {
    pub const ALL: [HazardKind; 3] = [
        HazardKind::Landslide,
        HazardKind::Liquefaction,
        HazardKind::BuildingDamage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HazardKind::Landslide => "landslide",
            HazardKind::Liquefaction => "liquefaction",
            HazardKind::BuildingDamage => "building_damage",
        }
    }

    /// Short tag used in output file names.
    pub fn tag(self) -> &'static str {
        match self {
            HazardKind::Landslide => "ls",
            HazardKind::Liquefaction => "lf",
            HazardKind::BuildingDamage => "bd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        HazardKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct InventoryPoint {
    pub lon: f64,
    pub lat: f64,
    pub category: HazardKind,
}

/// Binary truth raster plus the number of points of the category that fell
/// outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub raster: Raster,
    pub outside: usize,
}

/// Marks every cell holding at least one point of `category`.
pub fn rasterize_points(points: &[InventoryPoint], target: &GridSpec, category: HazardKind) -> Rasterized {
    let mut raster = Raster::filled(*target, 0.0);
    let mut outside = 0;
    for p in points.iter().filter(|p| p.category == category) {
        match target.locate(p.lon, p.lat) {
            Some((row, col)) => raster.values[target.index(row, col)] = 1.0,
            None => outside += 1,
        }
    }
    Rasterized { raster, outside }
}

const PRIOR_TOL: f64 = 1e-6;

/// One record per DPM cell; all rasters must share the DPM lattice.
///
/// `dpm` is expected to be normalized already; values are clamped into
/// `[delta, 1]`. Priors outside `[0, 1]` by more than 1e-6 are rejected.
pub fn build_dataset(
    dpm: &Raster,
    prior_ls: &Raster,
    prior_lf: &Raster,
    footprint: Option<&Raster>,
    delta: f64,
) -> Result<Vec<LocationRecord>> {
    let spec = &dpm.spec;
    let check = |name: &str, r: &Raster| -> Result<()> {
        if r.spec.same_lattice(spec) {
            Ok(())
        } else {
            Err(Error::GridMismatch(alloc::format!(
                "{name} grid does not match the damage-proxy grid"
            )))
        }
    };
    check("prior_ls", prior_ls)?;
    check("prior_lf", prior_lf)?;
    if let Some(fp) = footprint {
        check("footprint", fp)?;
    }
    let prior = |name: &str, v: Option<f64>, i: usize| -> Result<Option<f64>> {
        match v {
            Some(a) if !(-PRIOR_TOL..=1.0 + PRIOR_TOL).contains(&a) => {
                let (row, col) = spec.row_col(i);
                Err(Error::InvalidArgument(alloc::format!(
                    "{name} value {a} at ({row}, {col}) is not a probability"
                )))
            }
            other => Ok(other),
        }
    };
    let mut out = Vec::with_capacity(spec.len());
    for i in 0..spec.len() {
        let (row, col) = spec.row_col(i);
        let y = dpm.value(i);
        let a_ls = prior("prior_ls", prior_ls.value(i), i)?;
        let a_lf = prior("prior_lf", prior_lf.value(i), i)?;
        let building = footprint.and_then(|f| f.value(i)).is_some_and(|v| v > 0.0);
        out.push(match (y, a_ls, a_lf) {
            (Some(y), Some(a), Some(b)) => LocationRecord::new(row, col, y, a, b, building, delta),
            _ => {
                let mut r = LocationRecord::invalid(row, col);
                r.has_building = building;
                r
            }
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ncols: usize, nrows: usize, cell: f64) -> GridSpec {
        GridSpec::new(ncols, nrows, 0.0, 0.0, cell, -9999.0).unwrap()
    }

    #[test]
    fn align_identity() {
        let s = spec(3, 2, 10.0);
        let r = Raster::new(s, vec![1.0, 2.0, -9999.0, 4.0, 5.0, 6.0]).unwrap();
        let a = align_to_grid(&r, &s).unwrap();
        assert_eq!(a, r);
        assert_eq!(align_to_grid(&a, &s).unwrap(), a);
    }

    #[test]
    fn align_upsamples_by_replication() {
        let src = Raster::new(spec(1, 1, 2.0), vec![0.7]).unwrap();
        let a = align_to_grid(&src, &spec(2, 2, 1.0)).unwrap();
        assert_eq!(a.values, vec![0.7; 4]);
    }

    #[test]
    fn align_outside_is_nodata() {
        let src = Raster::new(spec(1, 1, 1.0), vec![0.7]).unwrap();
        let target = spec(2, 1, 1.0);
        let a = align_to_grid(&src, &target).unwrap();
        assert_eq!(a.get(0, 0), Some(0.7));
        assert_eq!(a.get(0, 1), None);
        let far = GridSpec::new(1, 1, 100.0, 100.0, 1.0, -9999.0).unwrap();
        assert!(matches!(align_to_grid(&src, &far), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn normalize_examples() {
        let s = spec(3, 1, 1.0);
        let r = Raster::new(s, vec![0.0, 5.0, 10.0]).unwrap();
        let n = normalize_dpm(&r, 1e-4, false).unwrap();
        assert_eq!(n.values, vec![1e-4, 0.5, 1.0]);

        let r = Raster::new(s, vec![0.0, 0.25, 1.0]).unwrap();
        let n = normalize_dpm(&r, 1e-4, true).unwrap();
        assert_eq!(n.values, vec![1e-4, 0.25, 1.0]);

        let c = Raster::filled(s, 3.0);
        assert!(normalize_dpm(&c, 1e-4, false).is_err());
        assert!(normalize_dpm(&Raster::nodata(s), 1e-4, false).is_err());
    }

    #[test]
    fn rasterize_half_open_edges() {
        let s = spec(2, 2, 1.0);
        // x = 1 is the shared vertical edge: belongs to the east cell (its west edge).
        // y = 1 is the shared horizontal edge: belongs to the south cell (its north edge).
        let pts = [InventoryPoint { lon: 1.0, lat: 1.0, category: HazardKind::Landslide }];
        let r = rasterize_points(&pts, &s, HazardKind::Landslide);
        assert_eq!(r.raster.values, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r.outside, 0);
    }

    #[test]
    fn rasterize_counts_and_is_binary() {
        let s = spec(2, 2, 1.0);
        let r = rasterize_points(&[], &s, HazardKind::Landslide);
        assert!(r.raster.values.iter().all(|v| *v == 0.0));
        let pts = [
            InventoryPoint { lon: 0.2, lat: 1.8, category: HazardKind::Landslide },
            InventoryPoint { lon: 0.3, lat: 1.7, category: HazardKind::Landslide },
            InventoryPoint { lon: 5.0, lat: 1.7, category: HazardKind::Landslide },
            InventoryPoint { lon: 1.5, lat: 0.5, category: HazardKind::Liquefaction },
        ];
        let r = rasterize_points(&pts, &s, HazardKind::Landslide);
        assert_eq!(r.raster.values, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(r.outside, 1);
    }

    #[test]
    fn dataset_validity_and_footprint() {
        let s = spec(2, 1, 1.0);
        let dpm = Raster::new(s, vec![0.5, 0.2]).unwrap();
        let ls = Raster::new(s, vec![0.1, -9999.0]).unwrap();
        let lf = Raster::new(s, vec![0.2, 0.3]).unwrap();
        let recs = build_dataset(&dpm, &ls, &lf, None, 1e-4).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].valid && !recs[1].valid);
        assert!(recs.iter().all(|r| !r.has_building));

        let fp = Raster::new(s, vec![1.0, 0.0]).unwrap();
        let recs = build_dataset(&dpm, &ls, &lf, Some(&fp), 1e-4).unwrap();
        assert!(recs[0].has_building);
    }

    #[test]
    fn dataset_prior_domain() {
        let s = spec(1, 1, 1.0);
        let dpm = Raster::new(s, vec![0.5]).unwrap();
        let lf = Raster::new(s, vec![0.2]).unwrap();
        let ok = Raster::new(s, vec![1.0 + 5e-7]).unwrap();
        let recs = build_dataset(&dpm, &ok, &lf, None, 1e-4).unwrap();
        assert_eq!(recs[0].alpha_ls, 1.0);
        let bad = Raster::new(s, vec![1.1]).unwrap();
        assert!(build_dataset(&dpm, &bad, &lf, None, 1e-4).is_err());
        let other = Raster::new(spec(1, 1, 2.0), vec![0.2]).unwrap();
        assert!(matches!(build_dataset(&dpm, &other, &lf, None, 1e-4), Err(Error::GridMismatch(_))));
    }
}
