//! Rolling sensor-centric elevation raster with spike removal and hole filling.
//!
//! Cells hold a terrain height in world z or are holes. Holes are stored as
//! NaN; every other cell is finite. Rows run along world y and columns along
//! world x, both increasing, and cell `(col, row)` covers the half-open
//! footprint `[(ox + col) * res, (ox + col + 1) * res)` in x (same for y).

use std::fmt::Write as _;

use thiserror::Error;

use crate::exec::{for_each_row, Execution};
use crate::geometry::{Frame, Point3, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum ElevationError {
    #[error("grid resolution and side length must be positive, got {resolution} / {side}")]
    Geometry { resolution: f64, side: f64 },
    #[error("closing kernel must be odd and at least 3, got {0}")]
    Kernel(usize),
    #[error("slope threshold must be positive, got {0}")]
    Slope(f64),
    #[error("elevation grids integrate world-frame clouds only")]
    SensorFrame,
    #[error("malformed raster dump at line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    resolution: f64,
    width: usize,
    height: usize,
    /// World cell index of column 0 / row 0.
    origin: (i64, i64),
    cells: Vec<f64>,
}

impl ElevationGrid {
    /// All-hole square grid of `side_length` meters around `center`. The
    /// center is snapped to the cell lattice.
    pub fn new(center: &Point3, resolution: f64, side_length: f64) -> Result<Self, ElevationError> {
        if !(resolution > 0.0 && side_length >= resolution && resolution.is_finite() && side_length.is_finite()) {
            return Err(ElevationError::Geometry {
                resolution,
                side: side_length,
            });
        }
        let width = (side_length / resolution).round() as usize;
        Ok(Self {
            resolution,
            width,
            height: width,
            origin: Self::origin_for(center, resolution, width, width),
            cells: vec![f64::NAN; width * width],
        })
    }

    fn origin_for(center: &Point3, resolution: f64, width: usize, height: usize) -> (i64, i64) {
        let cx = (center.x / resolution).round() as i64;
        let cy = (center.y / resolution).round() as i64;
        (cx - (width / 2) as i64, cy - (height / 2) as i64)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn side_length(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    /// World x/y of the grid center (on a cell corner).
    pub fn center(&self) -> (f64, f64) {
        (
            (self.origin.0 + (self.width / 2) as i64) as f64 * self.resolution,
            (self.origin.1 + (self.height / 2) as i64) as f64 * self.resolution,
        )
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.cells[row * self.width + col];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, col: usize, row: usize, value: Option<f64>) {
        let v = value.filter(|v| v.is_finite()).unwrap_or(f64::NAN);
        self.cells[row * self.width + col] = v;
    }

    pub fn is_hole(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col].is_nan()
    }

    pub fn count_filled(&self) -> usize {
        self.cells.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = (x / self.resolution).floor() as i64 - self.origin.0;
        let gy = (y / self.resolution).floor() as i64 - self.origin.1;
        ((0..self.width as i64).contains(&gx) && (0..self.height as i64).contains(&gy))
            .then_some((gx as usize, gy as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            ((self.origin.0 + col as i64) as f64 + 0.5) * self.resolution,
            ((self.origin.1 + row as i64) as f64 + 0.5) * self.resolution,
        )
    }

    /// Fuses a world-frame cloud by keeping the per-cell minimum z.
    /// Points outside the footprint are ignored.
    pub fn integrate(&mut self, cloud: &PointCloud) -> Result<(), ElevationError> {
        if cloud.frame() != Frame::World {
            return Err(ElevationError::SensorFrame);
        }
        for p in cloud.iter() {
            if let Some((c, r)) = self.cell_of(p.x, p.y) {
                let cell = &mut self.cells[r * self.width + c];
                // NaN.min(z) == z, so holes take the first value.
                *cell = cell.min(p.z);
            }
        }
        Ok(())
    }

    /// Shifts the window to `new_center` by whole cells. Cells that stay in
    /// view keep their values; newly exposed cells are holes.
    pub fn recenter(&mut self, new_center: &Point3) {
        let origin = Self::origin_for(new_center, self.resolution, self.width, self.height);
        let (dx, dy) = (origin.0 - self.origin.0, origin.1 - self.origin.1);
        if dx == 0 && dy == 0 {
            return;
        }
        let mut cells = vec![f64::NAN; self.cells.len()];
        let (w, h) = (self.width as i64, self.height as i64);
        for row in 0..h {
            let src_row = row + dy;
            if !(0..h).contains(&src_row) {
                continue;
            }
            for col in 0..w {
                let src_col = col + dx;
                if (0..w).contains(&src_col) {
                    cells[(row * w + col) as usize] = self.cells[(src_row * w + src_col) as usize];
                }
            }
        }
        self.cells = cells;
        self.origin = origin;
    }

    /// Per-cell slope: the largest `|dh| / distance` to a non-hole 8-neighbour
    /// (zero when all neighbours are holes). Holes report `None`.
    pub fn slope(&self, col: usize, row: usize) -> Option<f64> {
        let h = self.get(col, row)?;
        let mut slope: f64 = 0.0;
        for (dc, dr) in NEIGHBOURS {
            let (c, r) = (col as i64 + dc, row as i64 + dr);
            if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
                continue;
            }
            if let Some(n) = self.get(c as usize, r as usize) {
                let dist = if dc != 0 && dr != 0 {
                    self.resolution * std::f64::consts::SQRT_2
                } else {
                    self.resolution
                };
                slope = slope.max((n - h).abs() / dist);
            }
        }
        Some(slope)
    }

    /// Turns every cell steeper than `max_slope` into a hole.
    pub fn slope_filter(&self, max_slope: f64, exec: Execution) -> Result<ElevationGrid, ElevationError> {
        if !(max_slope > 0.0) {
            return Err(ElevationError::Slope(max_slope));
        }
        let mut out = self.clone();
        for_each_row(exec, &mut out.cells, self.width, |row, cells| {
            for (col, cell) in cells.iter_mut().enumerate() {
                if self.slope(col, row).is_some_and(|s| s > max_slope) {
                    *cell = f64::NAN;
                }
            }
        });
        Ok(out)
    }

    /// Grayscale closing with a square `kernel`.
    ///
    /// Dilation takes the neighbourhood maximum with holes as -inf, so a
    /// cell stays a hole only if its whole window is empty. Erosion takes
    /// the neighbourhood minimum over the dilated cells that are not holes,
    /// which never removes a finite cell.
    pub fn morphological_close(&self, kernel: usize, exec: Execution) -> Result<ElevationGrid, ElevationError> {
        if kernel < 3 || kernel.is_multiple_of(2) {
            return Err(ElevationError::Kernel(kernel));
        }
        let radius = kernel / 2;
        let dilated = self.separable(radius, exec, f64::NEG_INFINITY, f64::max);
        let eroded = dilated.separable(radius, exec, f64::INFINITY, f64::min);
        let mut out = dilated;
        for (cell, e) in out.cells.iter_mut().zip(&eroded.cells) {
            if !cell.is_nan() {
                *cell = *e;
            }
        }
        Ok(out)
    }

    /// Separable box reduction where holes contribute `identity`. Result
    /// cells equal to `identity` become holes.
    fn separable(&self, radius: usize, exec: Execution, identity: f64, op: fn(f64, f64) -> f64) -> ElevationGrid {
        let (w, h) = (self.width, self.height);
        let value = |v: f64| if v.is_nan() { identity } else { v };
        let mut horizontal = vec![identity; w * h];
        for_each_row(exec, &mut horizontal, w, |row, out| {
            let src = &self.cells[row * w..(row + 1) * w];
            for (col, o) in out.iter_mut().enumerate() {
                let lo = col.saturating_sub(radius);
                let hi = (col + radius).min(w - 1);
                *o = src[lo..=hi].iter().fold(identity, |acc, &v| op(acc, value(v)));
            }
        });
        let mut cells = vec![f64::NAN; w * h];
        for_each_row(exec, &mut cells, w, |row, out| {
            let lo = row.saturating_sub(radius);
            let hi = (row + radius).min(h - 1);
            for (col, o) in out.iter_mut().enumerate() {
                let v = (lo..=hi).fold(identity, |acc, r| op(acc, horizontal[r * w + col]));
                *o = if v == identity { f64::NAN } else { v };
            }
        });
        ElevationGrid { cells, ..self.clone() }
    }

    /// One point per non-hole cell at the cell center.
    pub fn to_points(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.count_filled());
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(z) = self.get(col, row) {
                    let (x, y) = self.cell_center(col, row);
                    out.push(Point3::new(x, y, z));
                }
            }
        }
        out
    }

    /// ASCII raster: one row per line from the lowest y, space-separated,
    /// `nan` for holes.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.cells.len() * 8);
        for row in self.cells.chunks(self.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                if v.is_nan() {
                    s.push_str("nan");
                } else {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Parses a dump produced by [`to_ascii`](Self::to_ascii) into a grid
    /// with the given placement.
    pub fn from_ascii(text: &str, center: &Point3, resolution: f64) -> Result<Self, ElevationError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut cells = Vec::new();
        let mut width = None;
        for (i, line) in rows.iter().enumerate() {
            let before = cells.len();
            for tok in line.split_whitespace() {
                let v = if tok == "nan" {
                    f64::NAN
                } else {
                    tok.parse::<f64>().map_err(|e| ElevationError::Dump {
                        line: i + 1,
                        reason: e.to_string(),
                    })?
                };
                cells.push(v);
            }
            let n = cells.len() - before;
            if *width.get_or_insert(n) != n {
                return Err(ElevationError::Dump {
                    line: i + 1,
                    reason: format!("expected {} values, found {n}", width.unwrap_or(0)),
                });
            }
        }
        let width = width.unwrap_or(0);
        let height = rows.len();
        if width == 0 || !(resolution > 0.0) {
            return Err(ElevationError::Dump {
                line: 0,
                reason: "empty raster".into(),
            });
        }
        Ok(Self {
            resolution,
            width,
            height,
            origin: Self::origin_for(center, resolution, width, height),
            cells,
        })
    }
}

const NEIGHBOURS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Spike removal and hole filling applied to a raw fused grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    pub max_slope: f64,
    pub kernel: usize,
    pub closing_passes: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            max_slope: 1.0,
            kernel: 3,
            closing_passes: 2,
        }
    }
}

pub fn filter_chain(
    raw: &ElevationGrid,
    params: &FilterParams,
    exec: Execution,
) -> Result<ElevationGrid, ElevationError> {
    let mut grid = raw.slope_filter(params.max_slope, exec)?;
    for _ in 0..params.closing_passes {
        grid = grid.morphological_close(params.kernel, exec)?;
    }
    Ok(grid)
}

/// Ground points from the two most recent filtered grids, current first.
pub fn ground_points(current: &ElevationGrid, previous: Option<&ElevationGrid>) -> PointCloud {
    let mut points = current.to_points();
    if let Some(prev) = previous {
        points.extend(prev.to_points());
    }
    PointCloud::from_finite(points, Frame::World)
}
