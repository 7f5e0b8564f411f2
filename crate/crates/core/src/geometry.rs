//! Points, poses and frame-tagged point clouds.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Accepted deviation of an input quaternion's norm from one before it is
/// renormalized. Anything further off is rejected.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate at point {index}")]
    NonFinitePoint { index: usize },
    #[error("pose is not finite")]
    NonFinitePose,
    #[error("quaternion norm {norm} is not unit")]
    NonUnitQuaternion { norm: f64 },
    #[error("expected a {expected:?}-frame cloud, got {actual:?}")]
    WrongFrame { expected: Frame, actual: Frame },
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Sensor,
    World,
}

/// Rigid sensor-to-world transform. World z is gravity-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Point3::origin(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose from a position and a `(w, x, y, z)` quaternion.
    pub fn from_wxyz(position: Point3, w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !is_finite(&position) || ![w, x, y, z].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinitePose);
        }
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Self {
            position,
            orientation: UnitQuaternion::from_quaternion(q),
        })
    }

    /// Gravity-aligned pose with the given heading about world z.
    pub fn from_yaw(position: Point3, yaw: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.position + self.orientation * p.coords
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self {
            position: Point3::from(-(inv * self.position.coords)),
            orientation: inv,
        }
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

pub(crate) fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Ordered points in a single tagged frame. Every coordinate is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Result<Self, GeometryError> {
        if let Some(index) = points.iter().position(|p| !is_finite(p)) {
            return Err(GeometryError::NonFinitePoint { index });
        }
        Ok(Self { points, frame })
    }

    pub fn empty(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            frame,
        }
    }

    /// Callers guarantee finiteness.
    pub(crate) fn from_finite(points: Vec<Point3>, frame: Frame) -> Self {
        debug_assert!(points.iter().all(is_finite));
        Self { points, frame }
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame: self.frame,
        }
    }
}

/// Maps a sensor-frame scan into the world frame.
pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud, GeometryError> {
    if cloud.frame != Frame::Sensor {
        return Err(GeometryError::WrongFrame {
            expected: Frame::Sensor,
            actual: cloud.frame,
        });
    }
    let points = cloud.points.iter().map(|p| pose.transform_point(p)).collect();
    PointCloud::new(points, Frame::World)
}

/// Maps a world-frame cloud back into the sensor frame of `pose`.
pub fn inverse_transform_cloud(cloud: &PointCloud, pose: &Pose) -> Result<PointCloud, GeometryError> {
    if cloud.frame != Frame::World {
        return Err(GeometryError::WrongFrame {
            expected: Frame::World,
            actual: cloud.frame,
        });
    }
    let inv = pose.inverse();
    let points = cloud.points.iter().map(|p| inv.transform_point(p)).collect();
    PointCloud::new(points, Frame::Sensor)
}
