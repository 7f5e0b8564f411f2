use crate::geometry::{PointCloud, Pose};

/// One pose-stamped sweep. Points are in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanFrame {
    pub id: u64,
    pub timestamp: f64,
    pub pose: Pose,
    pub points: PointCloud,
}
