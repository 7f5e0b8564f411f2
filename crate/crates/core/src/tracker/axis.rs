//! Trimmed least-squares trunk axis.

use thiserror::Error;

use crate::geometry::{Point3, Vec3};

use super::TrackerParams;

#[derive(Debug, Error, PartialEq)]
pub enum AxisError {
    #[error("axis fit needs at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("degenerate axis fit: {0}")]
    Degenerate(&'static str),
}

pub const MIN_AXIS_POINTS: usize = 10;

/// Distances below this count as exact fits when trimming.
const DISTANCE_FLOOR: f64 = 1e-9;

/// Oriented line with a unit, upward-pointing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Point3,
    pub direction: Vec3,
}

impl Line3 {
    /// Normalizes `direction` and flips it to point up.
    pub fn new(point: Point3, direction: Vec3) -> Self {
        let mut direction = direction.normalize();
        if direction.z < 0.0 {
            direction = -direction;
        }
        Self { point, direction }
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        let v = p - self.point;
        (v - self.direction * v.dot(&self.direction)).norm()
    }

    /// Point of the line at height `z`. `None` for horizontal lines.
    pub fn at_height(&self, z: f64) -> Option<Point3> {
        (self.direction.z > 1e-12).then(|| self.point + self.direction * ((z - self.point.z) / self.direction.z))
    }

    /// Angle between the line and world z, in radians.
    pub fn tilt(&self) -> f64 {
        self.direction.z.clamp(-1.0, 1.0).acos()
    }
}

/// Result of one fit: the line plus the RMS point-to-line distance of the
/// points it was fitted on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisFit {
    pub line: Line3,
    pub residual: f64,
    pub support: usize,
}

/// Fits `x = a z + c`, `y = b z + d` by least squares over `points`.
pub fn fit_line(points: &[&Point3]) -> Result<AxisFit, AxisError> {
    let n = points.len();
    if n < 3 {
        return Err(AxisError::Degenerate("fewer than 3 points"));
    }
    let nf = n as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p.coords) / nf;
    let (mut szz, mut sxz, mut syz) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p.coords - mean;
        szz += d.z * d.z;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    if szz <= f64::EPSILON * nf * (1.0 + mean.z * mean.z) {
        return Err(AxisError::Degenerate("no vertical extent"));
    }
    let line = Line3::new(Point3::from(mean), Vec3::new(sxz / szz, syz / szz, 1.0));
    let residual = (points.iter().map(|p| line.distance(p).powi(2)).sum::<f64>() / nf).sqrt();
    Ok(AxisFit {
        line,
        residual,
        support: n,
    })
}

/// Robust major axis: an initial fit on every point, then one refit per
/// entry of the trim schedule on the points that lie within `k * sigma` of
/// the previous line and inside the central height band.
///
/// `sigma` is the RMS distance of the previous fit's support to its line.
/// Returns every intermediate fit, the last one being the answer.
pub fn fit_major_axis_trace(points: &[Point3], params: &TrackerParams) -> Result<Vec<AxisFit>, AxisError> {
    if points.len() < MIN_AXIS_POINTS {
        return Err(AxisError::TooFewPoints {
            required: MIN_AXIS_POINTS,
            got: points.len(),
        });
    }
    let (min_z, max_z) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.z), hi.max(p.z))
    });
    let margin = 0.5 * (1.0 - params.central_height_fraction) * (max_z - min_z);
    let (band_lo, band_hi) = (min_z + margin, max_z - margin);

    let all: Vec<&Point3> = points.iter().collect();
    let mut fits = vec![fit_line(&all)?];
    for &k in &params.trim_schedule {
        let prev = fits[fits.len() - 1];
        let limit = (k * prev.residual).max(DISTANCE_FLOOR);
        let kept: Vec<&Point3> = points
            .iter()
            .filter(|p| p.z >= band_lo && p.z <= band_hi && prev.line.distance(p) <= limit)
            .collect();
        if kept.len() < 3 {
            return Err(AxisError::Degenerate("trimming left fewer than 3 points"));
        }
        fits.push(fit_line(&kept)?);
    }
    Ok(fits)
}

pub fn fit_major_axis(points: &[Point3], params: &TrackerParams) -> Result<Line3, AxisError> {
    let fits = fit_major_axis_trace(points, params)?;
    Ok(fits[fits.len() - 1].line)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TrackerParams {
        TrackerParams::default()
    }

    #[test]
    fn vertical_points() {
        let pts: Vec<Point3> = (0..50).map(|i| Point3::new(2.0, -1.0, i as f64 * 0.1)).collect();
        let trace = fit_major_axis_trace(&pts, &params()).unwrap();
        let fit = trace.last().unwrap();
        assert_eq!(fit.line.direction, Vec3::new(0.0, 0.0, 1.0));
        assert!(fit.residual < 1e-12);
        assert!(fit.line.distance(&Point3::new(2.0, -1.0, 7.0)) < 1e-12);
    }

    #[test]
    fn diagonal_points() {
        let d = Vec3::new(1.0, 1.0, 1.0).normalize();
        let pts: Vec<Point3> = (0..40)
            .map(|i| Point3::new(0.5, 0.0, 1.0) + d * (i as f64 * 0.3))
            .collect();
        let line = fit_major_axis(&pts, &params()).unwrap();
        let angle = line.direction.dot(&d).clamp(-1.0, 1.0).acos();
        assert!(angle < 1e-9, "angle {angle}");
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<Point3> = (0..5).map(|i| Point3::new(0.0, 0.0, i as f64)).collect();
        assert_eq!(
            fit_major_axis(&pts, &params()),
            Err(AxisError::TooFewPoints { required: 10, got: 5 })
        );
    }

    #[test]
    fn flat_points_are_degenerate() {
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        assert!(matches!(fit_major_axis(&pts, &params()), Err(AxisError::Degenerate(_))));
    }

    #[test]
    fn line_helpers() {
        let l = Line3::new(Point3::origin(), Vec3::new(0.0, 1.0, -1.0));
        assert!(l.direction.z > 0.0);
        let p = l.at_height(2.0).unwrap();
        assert!((p - Point3::new(0.0, -2.0, 2.0)).norm() < 1e-12);
        assert!((l.tilt() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(Line3::new(Point3::origin(), Vec3::x()).at_height(1.0).is_none());
    }
}
