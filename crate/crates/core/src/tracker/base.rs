use thiserror::Error;

use crate::geometry::Point3;
use crate::spatial::SpatialIndex;

use super::Tree;

/// Ground points farther than this from a tree's lowest point are not
/// considered for its base, meters.
pub const BASE_SEARCH_RADIUS: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum BaseError {
    #[error("tree has no points")]
    EmptyTree,
    #[error("no ground point within {radius} m of the tree's lowest point")]
    Unavailable { radius: f64 },
}

/// Only tree points this close to the trunk axis can anchor the base
/// search, meters. Ground and branch points merged into the tree lie
/// farther out.
pub const BASE_AXIS_RADIUS: f64 = 1.0;

/// Locates a tree's base: among ground points within [`BASE_SEARCH_RADIUS`]
/// (3D) of the tree's lowest point near the axis, the one closest to the
/// trunk axis. The lowest point overall is used when no point lies within
/// [`BASE_AXIS_RADIUS`] of the axis. On success the descriptor's base is
/// updated; on failure it is left as is.
pub fn segment_base(tree: &mut Tree, ground: &SpatialIndex) -> Result<Point3, BaseError> {
    let axis = &tree.descriptor.incline;
    let lowest_of = |near: bool| {
        tree.points
            .iter()
            .filter(|p| !near || axis.distance(p) <= BASE_AXIS_RADIUS)
            .min_by(|a, b| a.z.total_cmp(&b.z))
    };
    let lowest = lowest_of(true)
        .or_else(|| lowest_of(false))
        .ok_or(BaseError::EmptyTree)?;
    let base = ground
        .radius_search(lowest, BASE_SEARCH_RADIUS)
        .into_iter()
        .map(|i| (axis.distance(ground.point(i)), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, i)| *ground.point(i))
        .ok_or(BaseError::Unavailable {
            radius: BASE_SEARCH_RADIUS,
        })?;
    tree.descriptor.base = Some(base);
    Ok(base)
}
