//! Online tree detection, tracking and stem diameter estimation from
//! mobile LiDAR scans.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod dbh;
pub mod elevation;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod scan;
pub mod sim;
pub mod spatial;
pub mod tracker;
pub mod voxel;

pub use exec::Execution;
pub use geometry::{Frame, Point3, PointCloud, Pose, Vec3};
