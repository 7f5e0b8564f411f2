//! Voxel-grid downsampling.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Error, PartialEq)]
#[error("voxel size must be positive and finite, got {0}")]
pub struct VoxelSizeError(pub f64);

pub(crate) fn voxel_key(p: &Point3, size: f64) -> (i64, i64, i64) {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

struct Accumulator {
    sum: [f64; 3],
    min: [f64; 3],
    max: [f64; 3],
    count: usize,
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Voxels are the half-open cells `[i*s, (i+1)*s)` anchored at the world
/// origin. Output points appear in the order their voxel was first touched.
/// The centroid is clamped per axis into the members' bounding box, which
/// keeps it inside its own voxel under rounding so the filter is idempotent.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, VoxelSizeError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(VoxelSizeError(voxel_size));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len() / 2);
    let mut accs: Vec<Accumulator> = Vec::new();
    for p in cloud.iter() {
        let c = [p.x, p.y, p.z];
        let slot = *slots.entry(voxel_key(p, voxel_size)).or_insert_with(|| {
            accs.push(Accumulator {
                sum: [0.0; 3],
                min: c,
                max: c,
                count: 0,
            });
            accs.len() - 1
        });
        let acc = &mut accs[slot];
        for (k, &v) in c.iter().enumerate() {
            acc.sum[k] += v;
            acc.min[k] = acc.min[k].min(v);
            acc.max[k] = acc.max[k].max(v);
        }
        acc.count += 1;
    }
    let points = accs
        .iter()
        .map(|a| {
            let n = a.count as f64;
            let axis = |k: usize| (a.sum[k] / n).clamp(a.min[k], a.max[k]);
            Point3::new(axis(0), axis(1), axis(2))
        })
        .collect();
    Ok(PointCloud::from_finite(points, cloud.frame()))
}
