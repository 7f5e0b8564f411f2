//! Diameter at breast height from a tree's accumulated points.
//!
//! The chain is: take a thin horizontal slice at breast height above the
//! base, project it onto the plane normal to the trunk axis, fit a circle
//! by RANSAC over circumcircles of point triples and refine the winner with
//! Pratt's algebraic fit on its inliers.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Point3, Vec3};
use crate::tracker::Tree;

pub type Point2 = Vector2<f64>;

pub const MIN_SLICE_POINTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum DbhError {
    #[error("tree has no base yet")]
    NoBase,
    #[error("breast-height slice holds {got} points, need {required}")]
    InsufficientSlice { got: usize, required: usize },
    #[error("circle fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("every sampled triple was collinear")]
    Degenerate,
    #[error("best circle explains {ratio:.3} of the points, below {required}")]
    LowConfidence { ratio: f64, required: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceParams {
    pub breast_height: f64,
    pub slice_thickness: f64,
    pub ransac_iterations: usize,
    pub inlier_tolerance: f64,
    pub min_inlier_ratio: f64,
    /// Base seed for RANSAC sampling. Per-tree streams mix in the tree id.
    pub seed: u64,
}

impl Default for SliceParams {
    fn default() -> Self {
        Self {
            breast_height: 1.4,
            slice_thickness: 0.10,
            ransac_iterations: 500,
            inlier_tolerance: 0.02,
            min_inlier_ratio: 0.5,
            seed: 0x5eed_d6b4,
        }
    }
}

impl SliceParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("breast_height", self.breast_height),
            ("slice_thickness", self.slice_thickness),
            ("inlier_tolerance", self.inlier_tolerance),
            ("min_inlier_ratio", self.min_inlier_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.ransac_iterations == 0 {
            return Err("ransac_iterations must be positive".into());
        }
        if self.slice_thickness >= self.breast_height {
            return Err("slice_thickness must be smaller than breast_height".into());
        }
        if self.min_inlier_ratio > 1.0 {
            return Err(format!(
                "min_inlier_ratio must be at most 1, got {}",
                self.min_inlier_ratio
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn residual(&self, p: &Point2) -> f64 {
        ((p - self.center).norm() - self.radius).abs()
    }

    pub fn count_inliers(&self, points: &[Point2], tolerance: f64) -> usize {
        points.iter().filter(|p| self.residual(p) <= tolerance).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: Point2,
    pub radius: f64,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
}

impl CircleFit {
    pub fn circle(&self) -> Circle {
        Circle {
            center: self.center,
            radius: self.radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Points whose height lies within half a slice thickness of breast height
/// above `base`.
pub fn slice_at_breast_height(points: &[Point3], base: &Point3, params: &SliceParams) -> Result<Vec<Point3>, DbhError> {
    let centre = base.z + params.breast_height;
    let half = 0.5 * params.slice_thickness;
    let slice: Vec<Point3> = points
        .iter()
        .filter(|p| (p.z - centre).abs() <= half)
        .copied()
        .collect();
    if slice.len() < MIN_SLICE_POINTS {
        return Err(DbhError::InsufficientSlice {
            got: slice.len(),
            required: MIN_SLICE_POINTS,
        });
    }
    Ok(slice)
}

/// Orthonormal in-plane basis for a plane with unit `normal`. The first
/// vector is world x projected onto the plane, or world y when the normal
/// is (nearly) parallel to x.
pub fn plane_basis(normal: &Vec3) -> (Vec3, Vec3) {
    let project = |v: Vec3| v - normal * normal.dot(&v);
    let mut e1 = project(Vec3::x());
    if e1.norm() < 1e-6 {
        e1 = project(Vec3::y());
    }
    let e1 = e1.normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

/// In-plane coordinates of `points` relative to `origin`.
pub fn project_to_plane(points: &[Point3], normal: &Vec3, origin: &Point3) -> Vec<Point2> {
    let (e1, e2) = plane_basis(normal);
    points
        .iter()
        .map(|p| {
            let v = p - origin;
            Point2::new(v.dot(&e1), v.dot(&e2))
        })
        .collect()
}

/// Circle through three points, `None` when they are (nearly) collinear.
pub fn circumcircle(a: &Point2, b: &Point2, c: &Point2) -> Option<Circle> {
    let (ab, ac) = (b - a, c - a);
    let d = 2.0 * (ab.x * ac.y - ab.y * ac.x);
    let scale = ab.norm_squared().max(ac.norm_squared());
    if d.abs() <= 1e-12 * scale || scale == 0.0 {
        return None;
    }
    let (b2, c2) = (ab.norm_squared(), ac.norm_squared());
    let offset = Point2::new(ac.y * b2 - ab.y * c2, ab.x * c2 - ac.x * b2) / d;
    Some(Circle {
        center: a + offset,
        radius: offset.norm(),
    })
}

/// Pratt's algebraic circle fit, solved by Newton iteration on the
/// characteristic polynomial of the centred moment matrix.
pub fn pratt_fit(points: &[Point2]) -> Option<Circle> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Point2>() / n as f64;
    let (mut mxx, mut myy, mut mxy, mut mxz, mut myz, mut mzz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (x, y) = (p.x - centroid.x, p.y - centroid.y);
        let z = x * x + y * y;
        mxx += x * x;
        myy += y * y;
        mxy += x * y;
        mxz += x * z;
        myz += y * z;
        mzz += z * z;
    }
    let nf = n as f64;
    let (mxx, myy, mxy, mxz, myz, mzz) = (mxx / nf, myy / nf, mxy / nf, mxz / nf, myz / nf, mzz / nf);
    let mz = mxx + myy;
    let cov_xy = mxx * myy - mxy * mxy;
    let (mxz2, myz2) = (mxz * mxz, myz * myz);
    let a2 = 4.0 * cov_xy - 3.0 * mz * mz - mzz;
    let a1 = mzz * mz + 4.0 * cov_xy * mz - mxz2 - myz2 - mz * mz * mz;
    let a0 = mxz2 * myy + myz2 * mxx - mzz * cov_xy - 2.0 * mxz * myz * mxy + mz * mz * cov_xy;
    let a22 = a2 + a2;

    let mut x = 0.0;
    let mut y = f64::INFINITY;
    for _ in 0..50 {
        let y_old = y;
        y = a0 + x * (a1 + x * (a2 + 4.0 * x * x));
        if y.abs() > y_old.abs() {
            x = 0.0;
            break;
        }
        let dy = a1 + x * (a22 + 16.0 * x * x);
        if dy == 0.0 {
            break;
        }
        let x_old = x;
        x = x_old - y / dy;
        if !x.is_finite() || x < 0.0 {
            x = 0.0;
            break;
        }
        if x == x_old || ((x - x_old) / x).abs() < 1e-14 {
            break;
        }
    }
    let det = x * x - x * mz + cov_xy;
    if det.abs() < f64::MIN_POSITIVE {
        return None;
    }
    let offset = Point2::new(mxz * (myy - x) - myz * mxy, myz * (mxx - x) - mxz * mxy) / (2.0 * det);
    let radius = (offset.norm_squared() + mz + 2.0 * x).sqrt();
    (radius.is_finite() && radius > 0.0).then(|| Circle {
        center: offset + centroid,
        radius,
    })
}

fn distinct_triple(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let mut k = rng.random_range(0..n - 2);
    if k >= lo {
        k += 1;
    }
    if k >= hi {
        k += 1;
    }
    (i, j, k)
}

/// RANSAC circle fit seeded with `seed`.
///
/// The hypothesis with most inliers (first one on ties) is refined by a
/// Pratt fit on its inliers. The refinement is kept only if it explains at
/// least as many points as the hypothesis.
pub fn ransac_circle(points: &[Point2], params: &SliceParams, seed: u64) -> Result<CircleFit, DbhError> {
    let n = points.len();
    if n < 3 {
        return Err(DbhError::TooFewPoints(n));
    }
    let tol = params.inlier_tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Circle, usize)> = None;
    for _ in 0..params.ransac_iterations {
        let (i, j, k) = distinct_triple(&mut rng, n);
        let Some(circle) = circumcircle(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let count = circle.count_inliers(points, tol);
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((circle, count));
        }
    }
    let (hypothesis, raw_count) = best.ok_or(DbhError::Degenerate)?;
    let inliers: Vec<Point2> = points
        .iter()
        .filter(|p| hypothesis.residual(p) <= tol)
        .copied()
        .collect();
    let (circle, count) = match pratt_fit(&inliers) {
        Some(refined) => {
            let count = refined.count_inliers(points, tol);
            if count >= raw_count {
                (refined, count)
            } else {
                (hypothesis, raw_count)
            }
        }
        None => (hypothesis, raw_count),
    };
    let ratio = count as f64 / n as f64;
    if ratio < params.min_inlier_ratio {
        return Err(DbhError::LowConfidence {
            ratio,
            required: params.min_inlier_ratio,
        });
    }
    Ok(CircleFit {
        center: circle.center,
        radius: circle.radius,
        inlier_count: count,
        inlier_ratio: ratio,
    })
}

/// Mixes a tree id into the base seed so each tree samples its own stream.
pub fn tree_seed(base: u64, id: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Full slice, project and fit chain for one tree. Does not modify the tree.
pub fn fit_breast_height_circle(tree: &Tree, params: &SliceParams) -> Result<CircleFit, DbhError> {
    let base = tree.descriptor.base.ok_or(DbhError::NoBase)?;
    let slice = slice_at_breast_height(&tree.points, &base, params)?;
    let projected = project_to_plane(&slice, &tree.descriptor.incline.direction, &base);
    ransac_circle(&projected, params, tree_seed(params.seed, tree.descriptor.id))
}

/// Estimates the tree's DBH and stores it in the descriptor on success.
/// On failure the last good estimate is kept.
pub fn estimate_dbh(tree: &mut Tree, params: &SliceParams) -> Result<f64, DbhError> {
    let dbh = fit_breast_height_circle(tree, params)?.diameter();
    tree.descriptor.dbh = Some(dbh);
    Ok(dbh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{Line3, TreeDescriptor};
    use std::f64::consts::TAU;

    fn ring(cx: f64, cy: f64, r: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let a = TAU * i as f64 / n as f64;
                Point2::new(cx + r * a.cos(), cy + r * a.sin())
            })
            .collect()
    }

    fn cylinder_tree(r: f64, base: Option<Point3>) -> Tree {
        let mut points = Vec::new();
        for k in 0..=200 {
            let z = k as f64 * 0.01;
            for j in 0..36 {
                let a = TAU * j as f64 / 36.0;
                points.push(Point3::new(3.0 + r * a.cos(), -2.0 + r * a.sin(), z));
            }
        }
        Tree {
            descriptor: TreeDescriptor {
                id: 7,
                incline: Line3::new(Point3::new(3.0, -2.0, 0.0), Vec3::z()),
                dbh: None,
                base,
                min_z: 0.0,
                max_z: 2.0,
                point_count: points.len(),
            },
            points,
        }
    }

    #[test]
    fn slice_boundaries() {
        let base = Point3::origin();
        let p = SliceParams::default();
        let mut pts = vec![Point3::new(0.0, 0.0, 1.4), Point3::new(0.0, 0.0, 1.46)];
        pts.extend((0..10).map(|i| Point3::new(i as f64, 0.0, 1.38)));
        let s = slice_at_breast_height(&pts, &base, &p).unwrap();
        assert!(s.contains(&Point3::new(0.0, 0.0, 1.4)));
        assert!(!s.contains(&Point3::new(0.0, 0.0, 1.46)));
        assert_eq!(s.len(), 11);
        assert_eq!(
            slice_at_breast_height(&pts[..5], &base, &p),
            Err(DbhError::InsufficientSlice { got: 4, required: 10 })
        );
    }

    #[test]
    fn vertical_projection_drops_z() {
        let origin = Point3::new(1.0, 2.0, 3.0);
        let pts = [Point3::new(2.0, 4.0, 9.0), Point3::new(0.5, 2.0, -1.0)];
        let out = project_to_plane(&pts, &Vec3::z(), &origin);
        assert_eq!(out, vec![Point2::new(1.0, 2.0), Point2::new(-0.5, 0.0)]);
    }

    #[test]
    fn basis_falls_back_for_x_normal() {
        let (e1, e2) = plane_basis(&Vec3::x());
        assert!((e1 - Vec3::y()).norm() < 1e-12);
        assert!((e2 - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn tilted_plane_preserves_in_plane_circle() {
        let normal = Vec3::new(0.2, -0.3, 1.0).normalize();
        let (e1, e2) = plane_basis(&normal);
        let origin = Point3::new(4.0, 1.0, 2.0);
        let pts: Vec<Point3> = (0..24)
            .map(|i| {
                let a = TAU * i as f64 / 24.0;
                origin + (e1 * a.cos() + e2 * a.sin()) * 0.35
            })
            .collect();
        for p in project_to_plane(&pts, &normal, &origin) {
            assert!((p.norm() - 0.35).abs() < 1e-12);
        }
    }

    #[test]
    fn circumcircle_of_right_triangle() {
        let c = circumcircle(&Point2::new(0.0, 0.0), &Point2::new(2.0, 0.0), &Point2::new(0.0, 2.0)).unwrap();
        assert!((c.center - Point2::new(1.0, 1.0)).norm() < 1e-12);
        assert!((c.radius - 2f64.sqrt()).abs() < 1e-12);
        assert!(circumcircle(&Point2::new(0.0, 0.0), &Point2::new(1.0, 1.0), &Point2::new(2.0, 2.0)).is_none());
    }

    #[test]
    fn three_point_ransac() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 2.0)];
        let fit = ransac_circle(&pts, &SliceParams::default(), 1).unwrap();
        assert!((fit.center - Point2::new(1.0, 1.0)).norm() < 1e-9);
        assert!((fit.radius - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(fit.inlier_count, 3);
    }

    #[test]
    fn exact_circle_recovered() {
        let pts = ring(1.0, 2.0, 0.3, 100);
        let fit = ransac_circle(&pts, &SliceParams::default(), 42).unwrap();
        assert!((fit.center - Point2::new(1.0, 2.0)).norm() < 1e-9);
        assert!((fit.radius - 0.3).abs() < 1e-9);
        assert_eq!(fit.inlier_count, 100);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn pratt_on_exact_points() {
        let c = pratt_fit(&ring(-3.0, 0.5, 1.7, 9)).unwrap();
        assert!((c.center - Point2::new(-3.0, 0.5)).norm() < 1e-10);
        assert!((c.radius - 1.7).abs() < 1e-10);
        assert!(pratt_fit(&ring(0.0, 0.0, 1.0, 2)).is_none());
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let pts: Vec<Point2> = (0..20).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert_eq!(
            ransac_circle(&pts, &SliceParams::default(), 3),
            Err(DbhError::Degenerate)
        );
        assert_eq!(
            ransac_circle(&pts[..2], &SliceParams::default(), 3),
            Err(DbhError::TooFewPoints(2))
        );
    }

    #[test]
    fn scattered_points_are_low_confidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point2> = (0..200)
            .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        assert!(matches!(
            ransac_circle(&pts, &SliceParams::default(), 9),
            Err(DbhError::LowConfidence { .. })
        ));
    }

    #[test]
    fn ideal_cylinder_dbh() {
        let mut tree = cylinder_tree(0.2, Some(Point3::origin()));
        let d = estimate_dbh(&mut tree, &SliceParams::default()).unwrap();
        assert!((d - 0.4).abs() < 1e-6);
        assert_eq!(tree.descriptor.dbh, Some(d));
    }

    #[test]
    fn missing_base_is_an_error() {
        let mut tree = cylinder_tree(0.2, None);
        assert_eq!(estimate_dbh(&mut tree, &SliceParams::default()), Err(DbhError::NoBase));
        assert_eq!(tree.descriptor.dbh, None);
    }

    #[test]
    fn failed_fit_keeps_last_estimate() {
        let mut tree = cylinder_tree(0.2, Some(Point3::origin()));
        estimate_dbh(&mut tree, &SliceParams::default()).unwrap();
        tree.descriptor.base = Some(Point3::new(0.0, 0.0, 10.0));
        assert!(estimate_dbh(&mut tree, &SliceParams::default()).is_err());
        assert!((tree.descriptor.dbh.unwrap() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn distinct_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 3..20 {
            for _ in 0..200 {
                let (i, j, k) = distinct_triple(&mut rng, n);
                assert!(i != j && j != k && i != k && i < n && j < n && k < n);
            }
        }
    }
}
