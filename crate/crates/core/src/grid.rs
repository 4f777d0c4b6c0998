//! Raster data model, ESRI ASCII grid I/O, alignment and resampling, masking,
//! and standard terrain derivatives computed from a DEM.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when comparing header reals for alignment.
pub const ALIGN_TOL: f64 = 1e-9;

/// Default nodata sentinel for grids produced by this crate.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected {expected} values, found {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("grids are not aligned: {field} differs ({left} vs {right})")]
    Misaligned {
        field: &'static str,
        left: f64,
        right: f64,
    },
    #[error("duplicate band name `{0}`")]
    DuplicateName(String),
    #[error("stack needs at least one band and as many names as grids ({grids} grids, {names} names)")]
    BandCount { grids: usize, names: usize },
    #[error("template does not overlap the source extent")]
    NoOverlap,
    #[error("DEM must be at least 3x3, got {nrows}x{ncols}")]
    DemTooSmall { nrows: usize, ncols: usize },
}

/// Georeferencing header of a single-band raster. Row 0 is the northernmost row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub xll: f64,
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: f64,
}

impl GridHeader {
    pub fn new(ncols: usize, nrows: usize, xll: f64, yll: f64, cellsize: f64) -> Self {
        Self {
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            nodata: DEFAULT_NODATA,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(GridError::Header("ncols and nrows must be positive".into()));
        }
        if !(self.cellsize > 0.0) || !self.cellsize.is_finite() {
            return Err(GridError::Header(format!(
                "cellsize must be positive, got {}",
                self.cellsize
            )));
        }
        if !self.xll.is_finite() || !self.yll.is_finite() {
            return Err(GridError::Header("corner coordinates must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Northern edge of the raster.
    pub fn ytop(&self) -> f64 {
        self.yll + self.nrows as f64 * self.cellsize
    }

    pub fn xright(&self) -> f64 {
        self.xll + self.ncols as f64 * self.cellsize
    }

    /// Map coordinates of the center of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.xll + (col as f64 + 0.5) * self.cellsize,
            self.ytop() - (row as f64 + 0.5) * self.cellsize,
        )
    }

    /// Cell containing the map point, or `None` outside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = (x - self.xll) / self.cellsize;
        let fr = (self.ytop() - y) / self.cellsize;
        if !(fc >= 0.0 && fr >= 0.0) {
            return None;
        }
        let (r, c) = (fr.floor() as usize, fc.floor() as usize);
        (r < self.nrows && c < self.ncols).then_some((r, c))
    }

    /// Returns the first differing field, in declaration order.
    pub fn check_aligned(&self, other: &GridHeader) -> Result<(), GridError> {
        let fields: [(&'static str, f64, f64); 6] = [
            ("ncols", self.ncols as f64, other.ncols as f64),
            ("nrows", self.nrows as f64, other.nrows as f64),
            ("xllcorner", self.xll, other.xll),
            ("yllcorner", self.yll, other.yll),
            ("cellsize", self.cellsize, other.cellsize),
            ("nodata", self.nodata, other.nodata),
        ];
        for (field, left, right) in fields {
            if (left - right).abs() > ALIGN_TOL {
                return Err(GridError::Misaligned { field, left, right });
            }
        }
        Ok(())
    }

    pub fn is_aligned(&self, other: &GridHeader) -> bool {
        self.check_aligned(other).is_ok()
    }
}

/// Single-band raster with row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub header: GridHeader,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(header: GridHeader, values: Vec<f64>) -> Result<Self, GridError> {
        header.validate()?;
        if values.len() != header.len() {
            return Err(GridError::ValueCount {
                expected: header.len(),
                found: values.len(),
            });
        }
        Ok(Self { header, values })
    }

    pub fn filled(header: GridHeader, value: f64) -> Self {
        Self {
            values: vec![value; header.len()],
            header,
        }
    }

    pub fn nodata_like(header: GridHeader) -> Self {
        Self::filled(header, header.nodata)
    }

    pub fn nrows(&self) -> usize {
        self.header.nrows
    }

    pub fn ncols(&self) -> usize {
        self.header.ncols
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.header.ncols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let i = self.index(row, col);
        self.values[i] = v;
    }

    #[inline]
    pub fn is_valid_value(&self, v: f64) -> bool {
        v.is_finite() && v != self.header.nodata
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.is_valid_value(self.get(row, col))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| self.is_valid_value(v)).count()
    }

    /// Valid values in row-major order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&v| self.is_valid_value(v))
            .collect()
    }
}

/// Aligned multi-band raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub header: GridHeader,
    pub band_names: Vec<String>,
    pub bands: Vec<Grid>,
}

impl GridStack {
    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// A stack cell is valid iff it is valid in every band.
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.bands.iter().all(|b| b.is_valid(row, col))
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        let n = self.header.len();
        (0..n)
            .map(|i| self.bands.iter().all(|b| b.is_valid_value(b.values[i])))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask().into_iter().filter(|&v| v).count()
    }

    /// Band values at one cell, in band order.
    pub fn cell_vector(&self, row: usize, col: usize) -> Vec<f64> {
        self.bands.iter().map(|b| b.get(row, col)).collect()
    }
}

// ---------------------------------------------------------------------------
// ESRI ASCII grid I/O

fn parse_f64(tok: &str, line: usize) -> Result<f64, GridError> {
    tok.parse::<f64>().map_err(|_| GridError::Parse {
        line,
        msg: format!("non-numeric token `{tok}`"),
    })
}

pub fn parse_ascii_grid(text: &str) -> Result<Grid, GridError> {
    let mut lines = text.lines().enumerate();
    let (mut ncols, mut nrows) = (None, None);
    let (mut xll, mut yll, mut cellsize, mut nodata) = (None, None, None, None);
    let mut center_x = false;
    let mut center_y = false;

    for _ in 0..6 {
        let (idx, line) = lines.next().ok_or(GridError::Parse {
            line: 0,
            msg: "file ends inside the header".into(),
        })?;
        let lineno = idx + 1;
        let mut parts = line.split_whitespace();
        let (key, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) => (k.to_ascii_lowercase(), v),
            _ => {
                return Err(GridError::Parse {
                    line: lineno,
                    msg: format!("expected `key value`, got `{}`", line.trim()),
                })
            }
        };
        let slot = match key.as_str() {
            "ncols" | "nrows" => {
                let v = value.parse::<usize>().map_err(|_| GridError::Parse {
                    line: lineno,
                    msg: format!("{key} must be a positive integer, got `{value}`"),
                })?;
                if key == "ncols" {
                    ncols = Some(v);
                } else {
                    nrows = Some(v);
                }
                continue;
            }
            "xllcorner" => &mut xll,
            "yllcorner" => &mut yll,
            "xllcenter" => {
                center_x = true;
                &mut xll
            }
            "yllcenter" => {
                center_y = true;
                &mut yll
            }
            "cellsize" => &mut cellsize,
            "nodata_value" => &mut nodata,
            _ => {
                return Err(GridError::Parse {
                    line: lineno,
                    msg: format!("malformed header key `{key}`"),
                })
            }
        };
        if slot.is_some() {
            return Err(GridError::Parse {
                line: lineno,
                msg: format!("duplicate header key `{key}`"),
            });
        }
        *slot = Some(parse_f64(value, lineno)?);
    }

    let missing = |k: &str| GridError::Header(format!("missing `{k}`"));
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut header = GridHeader {
        ncols: ncols.ok_or_else(|| missing("ncols"))?,
        nrows: nrows.ok_or_else(|| missing("nrows"))?,
        xll: xll.ok_or_else(|| missing("xllcorner"))?,
        yll: yll.ok_or_else(|| missing("yllcorner"))?,
        cellsize,
        nodata: nodata.ok_or_else(|| missing("NODATA_value"))?,
    };
    if center_x {
        header.xll -= 0.5 * cellsize;
    }
    if center_y {
        header.yll -= 0.5 * cellsize;
    }
    header.validate()?;

    let expected = header.len();
    let mut values = Vec::with_capacity(expected);
    for (idx, line) in lines {
        for tok in line.split_whitespace() {
            values.push(parse_f64(tok, idx + 1)?);
        }
    }
    if values.len() != expected {
        return Err(GridError::ValueCount {
            expected,
            found: values.len(),
        });
    }
    Ok(Grid { header, values })
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<Grid, GridError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ascii_grid(&text)
}

/// Serializes with shortest round-trip formatting, so parsing recovers every value exactly.
pub fn format_ascii_grid(grid: &Grid) -> String {
    let h = &grid.header;
    let mut out = String::with_capacity(grid.values.len() * 10 + 128);
    let _ = writeln!(out, "ncols {}", h.ncols);
    let _ = writeln!(out, "nrows {}", h.nrows);
    let _ = writeln!(out, "xllcorner {}", h.xll);
    let _ = writeln!(out, "yllcorner {}", h.yll);
    let _ = writeln!(out, "cellsize {}", h.cellsize);
    let _ = writeln!(out, "NODATA_value {}", h.nodata);
    for row in grid.values.chunks(h.ncols) {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let v = if grid.is_valid_value(v) { v } else { h.nodata };
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid(grid: &Grid, path: impl AsRef<Path>) -> Result<(), GridError> {
    let path = path.as_ref();
    fs::write(path, format_ascii_grid(grid)).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Alignment, resampling, masking

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Nearest,
    Bilinear,
}

fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < 1e-9 {
        r
    } else {
        f
    }
}

/// Resamples `src` onto `template`. Bilinear never blends across nodata: any
/// contributor with nonzero weight that is nodata or out of bounds yields nodata.
pub fn resample(src: &Grid, template: &GridHeader, method: Resampling) -> Result<Grid, GridError> {
    src.header.validate()?;
    template.validate()?;
    let s = &src.header;
    let overlap_x = template.xll.max(s.xll) < template.xright().min(s.xright());
    let overlap_y = template.yll.max(s.yll) < template.ytop().min(s.ytop());
    if !(overlap_x && overlap_y) {
        return Err(GridError::NoOverlap);
    }

    let mut out = Grid::nodata_like(*template);
    let nodata = template.nodata;
    for r in 0..template.nrows {
        for c in 0..template.ncols {
            let (x, y) = template.cell_center(r, c);
            // fractional source indices of cell centers
            let fc = snap((x - s.xll) / s.cellsize - 0.5);
            let fr = snap((s.ytop() - y) / s.cellsize - 0.5);
            let v = match method {
                Resampling::Nearest => {
                    let (ri, ci) = ((fr + 0.5).floor(), (fc + 0.5).floor());
                    if ri < 0.0 || ci < 0.0 || ri >= s.nrows as f64 || ci >= s.ncols as f64 {
                        None
                    } else {
                        let v = src.get(ri as usize, ci as usize);
                        src.is_valid_value(v).then_some(v)
                    }
                }
                Resampling::Bilinear => bilinear(src, fr, fc),
            };
            out.set(r, c, v.unwrap_or(nodata));
        }
    }
    Ok(out)
}

fn bilinear(src: &Grid, fr: f64, fc: f64) -> Option<f64> {
    let (r0, c0) = (fr.floor(), fc.floor());
    let (tr, tc) = (fr - r0, fc - c0);
    let mut acc = 0.0;
    for (dr, wr) in [(0.0, 1.0 - tr), (1.0, tr)] {
        for (dc, wc) in [(0.0, 1.0 - tc), (1.0, tc)] {
            let w = wr * wc;
            if w == 0.0 {
                continue;
            }
            let (ri, ci) = (r0 + dr, c0 + dc);
            if ri < 0.0 || ci < 0.0 || ri >= src.nrows() as f64 || ci >= src.ncols() as f64 {
                return None;
            }
            let v = src.get(ri as usize, ci as usize);
            if !src.is_valid_value(v) {
                return None;
            }
            acc += w * v;
        }
    }
    Some(acc)
}

pub fn stack(grids: Vec<Grid>, names: Vec<String>) -> Result<GridStack, GridError> {
    if grids.is_empty() || grids.len() != names.len() {
        return Err(GridError::BandCount {
            grids: grids.len(),
            names: names.len(),
        });
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(GridError::DuplicateName(n.clone()));
        }
    }
    let header = grids[0].header;
    for g in &grids[1..] {
        header.check_aligned(&g.header)?;
    }
    Ok(GridStack {
        header,
        band_names: names,
        bands: grids,
    })
}

/// Cells where the mask is nodata or 0 become nodata in every band.
pub fn apply_mask(stack: &GridStack, mask: &Grid) -> Result<GridStack, GridError> {
    stack.header.check_aligned(&mask.header)?;
    let mut out = stack.clone();
    for (i, &m) in mask.values.iter().enumerate() {
        if !mask.is_valid_value(m) || m == 0.0 {
            for b in &mut out.bands {
                b.values[i] = b.header.nodata;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Terrain derivatives

/// Band names produced by [`derive_terrain`], in output order.
pub const TERRAIN_BANDS: [&str; 7] = [
    "elevation",
    "slope",
    "aspect",
    "curvature",
    "tri",
    "spi",
    "twi",
];

const TAN_SLOPE_FLOOR: f64 = 1e-6;

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Seven standard terrain layers from a DEM: elevation, Horn slope (degrees),
/// aspect (degrees clockwise from north, downslope direction; flat = nodata),
/// profile curvature from a 3x3 quadratic fit, TRI, SPI and TWI from D8
/// contributing area per unit contour width. Border cells and cells touching
/// nodata are nodata in every band.
pub fn derive_terrain(dem: &Grid) -> Result<GridStack, GridError> {
    let h = dem.header;
    if h.nrows < 3 || h.ncols < 3 {
        return Err(GridError::DemTooSmall {
            nrows: h.nrows,
            ncols: h.ncols,
        });
    }
    let (nr, nc) = (h.nrows, h.ncols);
    let l = h.cellsize;
    let area = contributing_area(dem);

    let mut bands: Vec<Grid> = (0..7).map(|_| Grid::nodata_like(h)).collect();
    for r in 1..nr - 1 {
        for c in 1..nc - 1 {
            let mut w = [0.0; 9];
            let mut ok = true;
            for dr in 0..3 {
                for dc in 0..3 {
                    let v = dem.get(r + dr - 1, c + dc - 1);
                    ok &= dem.is_valid_value(v);
                    w[dr * 3 + dc] = v;
                }
            }
            if !ok {
                continue;
            }
            let [a, b, cc, d, e, f, g, hh, i] = w;
            // x east, y north
            let dzdx = ((cc + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * l);
            let dzdy = ((a + 2.0 * b + cc) - (g + 2.0 * hh + i)) / (8.0 * l);
            let grad = (dzdx * dzdx + dzdy * dzdy).sqrt();
            let slope = grad.atan().to_degrees();
            let aspect = if grad == 0.0 {
                h.nodata
            } else {
                (-dzdx).atan2(-dzdy).to_degrees().rem_euclid(360.0)
            };

            let zxx = (d + f - 2.0 * e) / (l * l);
            let zyy = (b + hh - 2.0 * e) / (l * l);
            let zxy = (cc - a + g - i) / (4.0 * l * l);
            let gx = (f - d) / (2.0 * l);
            let gy = (b - hh) / (2.0 * l);
            let p = gx * gx + gy * gy;
            let curvature = if p == 0.0 {
                0.0
            } else {
                -(zxx * gx * gx + 2.0 * zxy * gx * gy + zyy * gy * gy) / p
            };

            let tri = w
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != 4)
                .map(|(_, &v)| (v - e).abs())
                .sum::<f64>()
                / 8.0;

            let tan_b = grad.max(TAN_SLOPE_FLOOR);
            let a_sc = area[dem.index(r, c)];
            let vals = [
                e,
                slope,
                aspect,
                curvature,
                tri,
                a_sc * tan_b,
                (a_sc / tan_b).ln(),
            ];
            for (band, v) in bands.iter_mut().zip(vals) {
                band.set(r, c, v);
            }
        }
    }
    stack(bands, TERRAIN_BANDS.iter().map(|s| s.to_string()).collect())
}

/// D8 single-flow-direction contributing area per unit contour width
/// (upslope cell count times cellsize). Nodata cells neither send nor receive.
fn contributing_area(dem: &Grid) -> Vec<f64> {
    let (nr, nc) = (dem.nrows(), dem.ncols());
    let n = nr * nc;
    let cs = dem.header.cellsize;
    let mut order: Vec<usize> = (0..n).filter(|&i| dem.is_valid_value(dem.values[i])).collect();
    // highest first; ties broken by index for determinism
    order.sort_by(|&x, &y| {
        dem.values[y]
            .partial_cmp(&dem.values[x])
            .unwrap()
            .then(x.cmp(&y))
    });
    let mut cells = vec![1.0; n];
    for &idx in &order {
        let (r, c) = ((idx / nc) as isize, (idx % nc) as isize);
        let z = dem.values[idx];
        let mut best: Option<(f64, usize)> = None;
        for (dr, dc) in NEIGHBORS {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr >= nr as isize || cc >= nc as isize {
                continue;
            }
            let j = rr as usize * nc + cc as usize;
            let zn = dem.values[j];
            if !dem.is_valid_value(zn) {
                continue;
            }
            let dist = if dr != 0 && dc != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let drop = (z - zn) / dist;
            if drop > 0.0 && best.is_none_or(|(b, _)| drop > b) {
                best = Some((drop, j));
            }
        }
        if let Some((_, j)) = best {
            cells[j] += cells[idx];
        }
    }
    cells.into_iter().map(|k| k * cs).collect()
}
