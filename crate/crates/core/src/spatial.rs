//! Build-once k-d tree over a point snapshot.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable k-d tree answering fixed-radius and k-nearest queries.
///
/// Returned ids index into the point slice the index was built from.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &Point3 {
        &self.points[id]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].partial_cmp(&points[b][axis]).unwrap_or(Ordering::Equal)
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap_or(Ordering::Equal))
            .unwrap_or(0)
    }

    /// Ids of all points within distance `r` (inclusive), ascending.
    pub fn radius_search(&self, query: &Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_search_into(query, r, &mut out);
        out.sort_unstable();
        out
    }

    /// Appends matches to `out` in tree order without sorting.
    pub fn radius_search_into(&self, query: &Point3, r: f64, out: &mut Vec<usize>) {
        if self.nodes.is_empty() || !(r >= 0.0) {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if (self.points[i] - query).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let d = query[axis] - value;
                    // Left holds coordinates <= value, right holds >= value.
                    if d <= r {
                        stack.push(left);
                    }
                    if d >= -r {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Up to `k` nearest points as `(id, distance)`, nearest first.
    /// Equal distances are ordered by id.
    pub fn k_nearest(&self, query: &Point3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let bound = if heap.len() == k {
                heap.peek().map_or(f64::INFINITY, |c| c.dist2)
            } else {
                f64::INFINITY
            };
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let dist2 = (self.points[i] - query).norm_squared();
                        let cand = Candidate { dist2, id: i };
                        if heap.len() < k {
                            heap.push(cand);
                        } else if heap.peek().is_some_and(|worst| cand < *worst) {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let d = query[axis] - value;
                    if d * d > bound {
                        // Only the near side can still contribute.
                        stack.push(if d <= 0.0 { left } else { right });
                        continue;
                    }
                    let (near, far) = if d <= 0.0 { (left, right) } else { (right, left) };
                    stack.push(far);
                    stack.push(near);
                }
            }
        }
        let mut out: Vec<_> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.id, c.dist2.sqrt())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.id.cmp(&other.id))
    }
}
