//! Display grid alignment and height-above-ground grids.
//!
//! Row 0 is the southern edge and column 0 the western edge; clients that
//! draw north-up flip vertically.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geokey::BBox;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, GridError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub nrows: usize,
    pub ncols: usize,
}

impl GridSpec {
    pub fn new(bbox: BBox, nrows: usize, ncols: usize) -> Result<Self> {
        let spec = Self { bbox, nrows, ncols };
        spec.validate()?;
        Ok(spec)
    }

    /// The campus box on a 70 x 90 grid, roughly 1e-4 degrees per cell.
    pub fn mit_campus() -> Self {
        Self { bbox: BBox::mit_campus(), nrows: 70, ncols: 90 }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate().map_err(|e| GridError::InvalidSpec(e.to_string()))?;
        if self.nrows == 0 || self.ncols == 0 {
            return Err(GridError::InvalidSpec("grid needs at least one row and column".into()));
        }
        if !(self.bbox.lat_max > self.bbox.lat_min && self.bbox.lon_max > self.bbox.lon_min) {
            return Err(GridError::InvalidSpec("bounding box has zero extent".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.nrows * self.ncols
    }

    /// Row-major index of `(row, col)`.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    /// Cell containing `(lat, lon)`, or `None` outside the box. Points on the
    /// north or east edge fall in the last row or column.
    pub fn align(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let b = &self.bbox;
        if !b.contains(lat, lon) {
            return None;
        }
        let scale = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            let i = ((v - lo) / (hi - lo) * n as f64).floor() as usize;
            i.min(n - 1)
        };
        Some((
            scale(lat, b.lat_min, b.lat_max, self.nrows),
            scale(lon, b.lon_min, b.lon_max, self.ncols),
        ))
    }
}

/// Free-function form of [`GridSpec::align`].
pub fn align(lat: f64, lon: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    spec.align(lat, lon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub lat: f64,
    pub lon: f64,
    /// Elevation in meters.
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

/// Heights above ground level in meters, row-major, row 0 south.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightGrid {
    pub spec: GridSpec,
    pub heights: Vec<f64>,
}

impl HeightGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, heights: vec![0.0; spec.cell_count()] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.heights[self.spec.index(row, col)]
    }

    pub fn max_height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    /// TSV matrix of meters, row 0 first.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for row in self.heights.chunks(self.spec.ncols) {
            let line: Vec<String> = row.iter().map(|h| h.to_string()).collect();
            writeln!(w, "{}", line.join("\t"))?;
        }
        Ok(())
    }

    /// Reads a matrix written by [`write_tsv`](Self::write_tsv); its shape
    /// must match `spec`.
    pub fn read_tsv(spec: GridSpec, r: impl BufRead) -> Result<Self> {
        let mut heights = Vec::with_capacity(spec.cell_count());
        let mut rows = 0;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let malformed = |msg: String| GridError::Malformed { line: i + 1, msg };
            let before = heights.len();
            for field in line.split('\t') {
                let h: f64 = field.parse().map_err(|_| malformed(format!("bad height {field:?}")))?;
                if !(h.is_finite() && h >= 0.0) {
                    return Err(malformed(format!("height {h} must be finite and non-negative")));
                }
                heights.push(h);
            }
            if heights.len() - before != spec.ncols {
                return Err(malformed(format!("expected {} columns", spec.ncols)));
            }
            rows += 1;
        }
        if rows != spec.nrows {
            return Err(GridError::InvalidSpec(format!("expected {} rows, found {rows}", spec.nrows)));
        }
        Ok(Self { spec, heights })
    }
}

/// Linear-interpolated percentile of sorted data, `p` in `[0, 1]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const GROUND_PERCENTILE: f64 = 0.05;
pub const SURFACE_PERCENTILE: f64 = 0.95;

/// Per cell: ground is the 5th and surface the 95th percentile of elevation;
/// height is their non-negative difference. Empty cells are 0.
pub fn build_height_grid(cloud: &PointCloud, spec: &GridSpec) -> HeightGrid {
    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); spec.cell_count()];
    for p in &cloud.points {
        if let Some((r, c)) = spec.align(p.lat, p.lon) {
            cells[spec.index(r, c)].push(p.z);
        }
    }
    let heights = cells
        .into_iter()
        .map(|mut zs| {
            if zs.is_empty() {
                return 0.0;
            }
            zs.sort_by(f64::total_cmp);
            let ground = percentile(&zs, GROUND_PERCENTILE);
            let surface = percentile(&zs, SURFACE_PERCENTILE);
            (surface - ground).max(0.0)
        })
        .collect();
    HeightGrid { spec: *spec, heights }
}

pub fn parse_point_cloud(r: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let malformed = |msg: String| GridError::Malformed { line: i + 1, msg };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [lat, lon, z] = fields[..] else {
            return Err(malformed(format!("expected 3 fields, found {}", fields.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| malformed(format!("bad number {s:?}")));
        let p = Point { lat: num(lat)?, lon: num(lon)?, z: num(z)? };
        if !((-90.0..=90.0).contains(&p.lat) && (-180.0..=180.0).contains(&p.lon) && p.z.is_finite()) {
            return Err(malformed("coordinate out of range".into()));
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let f = std::fs::File::open(path)?;
    parse_point_cloud(BufReader::new(f))
}

pub fn write_point_cloud(cloud: &PointCloud, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# lat lon z")?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.lat, p.lon, p.z)?;
    }
    Ok(())
}
