//! Euclidean cluster extraction.

use thiserror::Error;

use crate::geometry::{Point3, PointCloud};
use crate::spatial::SpatialIndex;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterParamError {
    #[error("cluster tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("cluster size bounds must satisfy 0 < min <= max, got [{min}, {max}]")]
    SizeBounds { min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    fn of(points: &[Point3], ids: &[usize]) -> Self {
        let first = points[ids[0]];
        let (mut min, mut max) = (first, first);
        for &i in &ids[1..] {
            let p = points[i];
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self { min, max }
    }
}

/// A connected component of the source cloud. Ids are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub indices: Vec<usize>,
    pub bounds: Aabb,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Connected components of the graph joining points at most `tolerance`
/// apart, keeping those with size in `[min_size, max_size]`.
///
/// Clusters are ordered by their smallest member id.
pub fn euclidean_cluster(
    cloud: &PointCloud,
    tolerance: f64,
    min_size: usize,
    max_size: usize,
) -> Result<Vec<Cluster>, ClusterParamError> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(ClusterParamError::Tolerance(tolerance));
    }
    if min_size == 0 || min_size > max_size {
        return Err(ClusterParamError::SizeBounds {
            min: min_size,
            max: max_size,
        });
    }
    let points = cloud.points();
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let index = SpatialIndex::new(cloud);
    let mut visited = vec![false; points.len()];
    let mut clusters = Vec::new();
    let mut neighbours = Vec::new();

    // Seeds are taken in ascending id, so clusters come out ordered by min id.
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut members = vec![seed];
        let mut head = 0;
        while head < members.len() {
            let current = members[head];
            head += 1;
            neighbours.clear();
            index.radius_search_into(&points[current], tolerance, &mut neighbours);
            for &n in &neighbours {
                if !visited[n] {
                    visited[n] = true;
                    members.push(n);
                }
            }
        }
        if (min_size..=max_size).contains(&members.len()) {
            members.sort_unstable();
            let bounds = Aabb::of(points, &members);
            clusters.push(Cluster {
                indices: members,
                bounds,
            });
        }
    }
    Ok(clusters)
}
