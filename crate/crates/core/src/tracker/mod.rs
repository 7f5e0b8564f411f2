//! Tree classification, matching and the persistent tree inventory.

mod axis;
mod base;

use std::collections::BTreeMap;

pub use axis::{fit_line, fit_major_axis, fit_major_axis_trace, AxisError, AxisFit, Line3, MIN_AXIS_POINTS};
pub use base::{segment_base, BaseError, BASE_AXIS_RADIUS, BASE_SEARCH_RADIUS};

use crate::clustering::Cluster;
use crate::exec::{map_slice, Execution};
use crate::geometry::{Point3, PointCloud};

pub type TreeId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    /// Largest accepted angle between a trunk axis and world z, radians.
    pub theta_threshold: f64,
    /// Required vertical extent of a tree cluster, meters.
    pub h_threshold: f64,
    /// Largest horizontal gap between two axes at the test plane for them to
    /// be the same tree, meters.
    pub match_distance: f64,
    /// Multipliers of the residual RMS used by successive trimming passes.
    pub trim_schedule: Vec<f64>,
    /// Height band kept by the axis fit, as a fraction of the cluster height.
    pub central_height_fraction: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            theta_threshold: 30f64.to_radians(),
            h_threshold: 2.0,
            match_distance: 0.4,
            trim_schedule: vec![3.0, 2.5, 2.0],
            central_height_fraction: 0.9,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("theta_threshold", self.theta_threshold),
            ("h_threshold", self.h_threshold),
            ("match_distance", self.match_distance),
            ("central_height_fraction", self.central_height_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.central_height_fraction > 1.0 {
            return Err(format!(
                "central_height_fraction must be in (0, 1], got {}",
                self.central_height_fraction
            ));
        }
        if let Some(k) = self.trim_schedule.iter().find(|k| !(**k > 0.0)) {
            return Err(format!("trim_schedule entries must be positive, got {k}"));
        }
        Ok(())
    }
}

/// Compact per-tree state derived from the tree's points.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeDescriptor {
    pub id: TreeId,
    pub incline: Line3,
    pub dbh: Option<f64>,
    pub base: Option<Point3>,
    pub min_z: f64,
    pub max_z: f64,
    pub point_count: usize,
}

impl TreeDescriptor {
    /// Derives the geometric part of a descriptor from `points`. Base and
    /// DBH are left unset.
    pub fn from_points(id: TreeId, points: &[Point3], params: &TrackerParams) -> Result<Self, AxisError> {
        let incline = fit_major_axis(points, params)?;
        let (min_z, max_z) = z_extent(points);
        Ok(Self {
            id,
            incline,
            dbh: None,
            base: None,
            min_z,
            max_z,
            point_count: points.len(),
        })
    }

    pub fn height(&self) -> f64 {
        self.max_z - self.min_z
    }
}

fn z_extent(points: &[Point3]) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.z), hi.max(p.z))
    })
}

/// A tracked tree: its descriptor and every point merged into it so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub descriptor: TreeDescriptor,
    pub points: Vec<Point3>,
}

impl Tree {
    /// Appends `points` and re-derives the geometric descriptor fields.
    /// If the enlarged set cannot be fitted the previous incline is kept.
    fn absorb(&mut self, points: &[Point3], params: &TrackerParams) {
        self.points.extend_from_slice(points);
        self.refresh(params);
    }

    fn refresh(&mut self, params: &TrackerParams) {
        let d = &mut self.descriptor;
        if let Ok(line) = fit_major_axis(&self.points, params) {
            d.incline = line;
        }
        (d.min_z, d.max_z) = z_extent(&self.points);
        d.point_count = self.points.len();
    }
}

/// Accepts a cluster as a tree when its axis is near vertical and it is
/// tall enough. The returned descriptor carries `id` 0; the inventory
/// assigns the real id on insertion.
pub fn classify_cluster(points: &[Point3], params: &TrackerParams) -> Option<TreeDescriptor> {
    let descriptor = TreeDescriptor::from_points(0, points, params).ok()?;
    (descriptor.incline.tilt() < params.theta_threshold && descriptor.height() > params.h_threshold)
        .then_some(descriptor)
}

/// Height of the plane on which two tree axes are compared: the bottom of
/// the higher tree when their height ranges are disjoint, otherwise the
/// middle of the overlap.
pub fn test_plane(a: &TreeDescriptor, b: &TreeDescriptor) -> f64 {
    if a.max_z < b.min_z {
        b.min_z
    } else if b.max_z < a.min_z {
        a.min_z
    } else {
        0.5 * (a.min_z.max(b.min_z) + a.max_z.min(b.max_z))
    }
}

/// Whether two axes converge to within `match_distance` at the test plane.
pub fn match_trees(a: &TreeDescriptor, b: &TreeDescriptor, params: &TrackerParams) -> bool {
    let z = test_plane(a, b);
    match (a.incline.at_height(z), b.incline.at_height(z)) {
        (Some(pa), Some(pb)) => (pa.xy() - pb.xy()).norm() < params.match_distance,
        _ => false,
    }
}

/// The set of tracked trees, keyed by id. Ids are never reused.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeInventory {
    trees: BTreeMap<TreeId, Tree>,
    next_id: TreeId,
}

/// What happened to each cluster handed to [`TreeInventory::track`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackOutcome {
    /// Trees created or grown, ascending.
    pub updated: Vec<TreeId>,
    /// Trees absorbed by a merge and deleted.
    pub retired: Vec<TreeId>,
    pub rejected_clusters: usize,
}

impl TreeInventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn get(&self, id: TreeId) -> Option<&Tree> {
        self.trees.get(&id)
    }

    pub fn get_mut(&mut self, id: TreeId) -> Option<&mut Tree> {
        self.trees.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tree> {
        self.trees.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tree> {
        self.trees.values_mut()
    }

    pub fn ids(&self) -> Vec<TreeId> {
        self.trees.keys().copied().collect()
    }

    pub fn descriptors(&self) -> Vec<TreeDescriptor> {
        self.trees.values().map(|t| t.descriptor.clone()).collect()
    }

    fn insert(&mut self, mut descriptor: TreeDescriptor, points: Vec<Point3>) -> TreeId {
        let id = self.next_id;
        self.next_id += 1;
        descriptor.id = id;
        self.trees.insert(id, Tree { descriptor, points });
        id
    }

    fn first_match(&self, descriptor: &TreeDescriptor, skip: Option<TreeId>, params: &TrackerParams) -> Option<TreeId> {
        self.trees
            .values()
            .filter(|t| Some(t.descriptor.id) != skip)
            .find(|t| match_trees(&t.descriptor, descriptor, params))
            .map(|t| t.descriptor.id)
    }

    /// Assigns the clusters of one scan to trees.
    ///
    /// Each accepted cluster merges into the first matching tree (ascending
    /// id), which then absorbs every further tree that matches its updated
    /// descriptor. Unmatched clusters become new trees. Classification runs
    /// per cluster under `exec`; assignment is sequential in cluster order.
    pub fn track(
        &mut self,
        cloud: &PointCloud,
        clusters: &[Cluster],
        params: &TrackerParams,
        exec: Execution,
    ) -> TrackOutcome {
        let candidates = map_slice(exec, clusters, |c| {
            let points = cloud.select(&c.indices).into_points();
            classify_cluster(&points, params).map(|d| (d, points))
        });
        let mut outcome = TrackOutcome::default();
        let mut updated = std::collections::BTreeSet::new();
        for candidate in candidates {
            let Some((descriptor, points)) = candidate else {
                outcome.rejected_clusters += 1;
                continue;
            };
            let Some(target) = self.first_match(&descriptor, None, params) else {
                updated.insert(self.insert(descriptor, points));
                continue;
            };
            let mut target = target;
            self.trees
                .get_mut(&target)
                .expect("matched tree exists")
                .absorb(&points, params);
            loop {
                let current = self.trees[&target].descriptor.clone();
                let Some(other) = self.first_match(&current, Some(target), params) else {
                    break;
                };
                let absorbed = self.trees.remove(&other).expect("matched tree exists");
                let mut merged = self.trees.remove(&target).expect("target present");
                merged.absorb(&absorbed.points, params);
                // The merged tree keeps the older id.
                let retired = target.max(other);
                target = target.min(other);
                merged.descriptor.id = target;
                if target == other {
                    merged.descriptor.base = merged.descriptor.base.or(absorbed.descriptor.base);
                    merged.descriptor.dbh = merged.descriptor.dbh.or(absorbed.descriptor.dbh);
                }
                self.trees.insert(target, merged);
                updated.remove(&retired);
                outcome.retired.push(retired);
            }
            updated.insert(target);
        }
        outcome.updated = updated.into_iter().collect();
        outcome
    }

    /// Checks the structural invariants that hold after every `track` call.
    pub fn check_invariants(&self, params: &TrackerParams) -> Result<(), String> {
        let trees: Vec<&Tree> = self.trees.values().collect();
        for t in &trees {
            let d = &t.descriptor;
            if d.max_z < d.min_z {
                return Err(format!("tree {} has max_z < min_z", d.id));
            }
            if d.point_count != t.points.len() {
                return Err(format!("tree {} point count mismatch", d.id));
            }
            if let Some(b) = d.base {
                if b.z > d.min_z + BASE_SEARCH_RADIUS {
                    return Err(format!("tree {} base above min_z + radius", d.id));
                }
            }
        }
        for (i, a) in trees.iter().enumerate() {
            for b in &trees[i + 1..] {
                if match_trees(&a.descriptor, &b.descriptor, params) {
                    return Err(format!("trees {} and {} still match", a.descriptor.id, b.descriptor.id));
                }
            }
        }
        Ok(())
    }
}
