//! Implementations checked against slow, obviously correct references.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treetrack_core::clustering::euclidean_cluster;
use treetrack_core::elevation::ElevationGrid;
use treetrack_core::spatial::SpatialIndex;
use treetrack_core::voxel::voxel_downsample;
use treetrack_core::{Execution, Frame, Point3, PointCloud};

fn world(points: Vec<Point3>) -> PointCloud {
    PointCloud::new(points, Frame::World).unwrap()
}

fn key(p: &Point3, s: f64) -> (i64, i64, i64) {
    (
        (p.x / s).floor() as i64,
        (p.y / s).floor() as i64,
        (p.z / s).floor() as i64,
    )
}

#[test]
fn voxel_matches_hash_oracle_on_uniform_cube() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Point3> = (0..100_000)
        .map(|_| {
            Point3::new(
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            )
        })
        .collect();
    let size = 0.08;
    let mut oracle: BTreeMap<_, (Point3, usize)> = BTreeMap::new();
    for p in &pts {
        let e = oracle.entry(key(p, size)).or_insert((Point3::origin(), 0));
        e.0.coords += p.coords;
        e.1 += 1;
    }
    let out = voxel_downsample(&world(pts), size).unwrap();
    assert!(out.len() as f64 <= (10.0f64 / size).powi(3));
    assert_eq!(out.len(), oracle.len());
    let mut seen = BTreeSet::new();
    for q in out.iter() {
        let k = key(q, size);
        assert!(seen.insert(k), "two outputs in voxel {k:?}");
        let (sum, n) = oracle[&k];
        assert!((q.coords - sum.coords / n as f64).norm() < 1e-12);
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra.max(rb)] = ra.min(rb);
    }
}

/// Components of the at-most-`tol` graph with size in range, by brute force.
fn union_find_clusters(points: &[Point3], tol: f64, min: usize, max: usize) -> BTreeSet<Vec<usize>> {
    let mut uf = UnionFind((0..points.len()).collect());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if (points[i] - points[j]).norm() <= tol {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..points.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    groups
        .into_values()
        .filter(|g| g.len() >= min && g.len() <= max)
        .collect()
}

fn clusters_as_sets(points: &[Point3], tol: f64, min: usize, max: usize) -> BTreeSet<Vec<usize>> {
    euclidean_cluster(&world(points.to_vec()), tol, min, max)
        .unwrap()
        .into_iter()
        .map(|c| {
            let mut ids = c.indices;
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Mixed-density cloud: a few tight blobs over a sparse background.
fn mixed_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    let blobs: Vec<(Point3, f64)> = (0..rng.random_range(1..6))
        .map(|_| {
            let c = Point3::new(
                rng.random_range(0.0..8.0),
                rng.random_range(0.0..8.0),
                rng.random_range(0.0..3.0),
            );
            (c, rng.random_range(0.1..0.8))
        })
        .collect();
    (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                Point3::new(
                    rng.random_range(0.0..8.0),
                    rng.random_range(0.0..8.0),
                    rng.random_range(0.0..3.0),
                )
            } else {
                let (c, spread) = blobs[rng.random_range(0..blobs.len())];
                c + (Point3::new(rng.random(), rng.random(), rng.random()) - Point3::new(0.5, 0.5, 0.5)) * spread * 2.0
            }
        })
        .collect()
}

#[test]
fn clustering_matches_union_find_on_fifty_clouds() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=2000);
        let pts = mixed_cloud(&mut rng, n);
        let tol = rng.random_range(0.05..0.4);
        let min = rng.random_range(1..20);
        let max = if seed % 3 == 0 {
            rng.random_range(min..400)
        } else {
            usize::MAX
        };
        assert_eq!(
            clusters_as_sets(&pts, tol, min, max),
            union_find_clusters(&pts, tol, min, max),
            "seed {seed}"
        );
    }
}

fn arb_cloud() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((0.0..4.0f64, 0.0..4.0f64, 0.0..2.0f64), 0..300)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

proptest! {
    #[test]
    fn clusters_are_maximal_disjoint_components(pts in arb_cloud(), tol in 0.05..0.6f64, min in 1usize..6) {
        let clusters = clusters_as_sets(&pts, tol, min, usize::MAX);
        prop_assert_eq!(&clusters, &union_find_clusters(&pts, tol, min, usize::MAX));
        let mut owner = vec![None; pts.len()];
        for (c, ids) in clusters.iter().enumerate() {
            for &i in ids {
                prop_assert!(owner[i].is_none());
                owner[i] = Some(c);
            }
        }
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if owner[i].is_some() && (pts[i] - pts[j]).norm() <= tol {
                    prop_assert_eq!(owner[i], owner[j]);
                }
            }
        }
    }

    #[test]
    fn clustering_ignores_input_order(pts in arb_cloud(), tol in 0.05..0.6f64, seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..pts.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
        let mapped: BTreeSet<Vec<usize>> = clusters_as_sets(&shuffled, tol, 1, usize::MAX)
            .into_iter()
            .map(|ids| {
                let mut orig: Vec<usize> = ids.into_iter().map(|i| order[i]).collect();
                orig.sort_unstable();
                orig
            })
            .collect();
        prop_assert_eq!(mapped, clusters_as_sets(&pts, tol, 1, usize::MAX));
    }

    #[test]
    fn radius_search_matches_scan(pts in arb_cloud(), q in (0.0..4.0f64, 0.0..4.0f64, 0.0..2.0f64), r in 0.01..2.0f64) {
        let q = Point3::new(q.0, q.1, q.2);
        let index = SpatialIndex::from_points(&pts);
        let mut got = index.radius_search(&q, r);
        got.sort_unstable();
        let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm() <= r).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn voxel_output_is_one_centroid_per_voxel(pts in arb_cloud(), size in 0.05..1.0f64) {
        let out = voxel_downsample(&world(pts.clone()), size).unwrap();
        let occupied: BTreeSet<_> = pts.iter().map(|p| key(p, size)).collect();
        let produced: BTreeSet<_> = out.iter().map(|p| key(p, size)).collect();
        prop_assert_eq!(out.len(), occupied.len());
        prop_assert_eq!(produced, occupied);
        let again = voxel_downsample(&out, size).unwrap();
        prop_assert_eq!(again.points(), out.points());
    }
}

/// Straightforward closing: window maxima over present cells, then window
/// minima over present dilated cells. Holes stay holes only when their whole
/// window is empty.
fn reference_close(cells: &[Option<f64>], w: usize, h: usize, kernel: usize) -> Vec<Option<f64>> {
    let r = (kernel / 2) as i64;
    let window = |grid: &[Option<f64>], col: usize, row: usize, pick: fn(f64, f64) -> f64| {
        let mut acc: Option<f64> = None;
        for dr in -r..=r {
            for dc in -r..=r {
                let (c, rr) = (col as i64 + dc, row as i64 + dr);
                if c < 0 || rr < 0 || c >= w as i64 || rr >= h as i64 {
                    continue;
                }
                if let Some(v) = grid[rr as usize * w + c as usize] {
                    acc = Some(acc.map_or(v, |a| pick(a, v)));
                }
            }
        }
        acc
    };
    let mut dilated = vec![None; w * h];
    for row in 0..h {
        for col in 0..w {
            dilated[row * w + col] = window(cells, col, row, f64::max);
        }
    }
    let mut out = vec![None; w * h];
    for row in 0..h {
        for col in 0..w {
            if dilated[row * w + col].is_some() {
                out[row * w + col] = window(&dilated, col, row, f64::min);
            }
        }
    }
    out
}

fn grid_from(cells: &[Option<f64>], side_cells: usize) -> ElevationGrid {
    let mut g = ElevationGrid::new(&Point3::origin(), 0.5, 0.5 * side_cells as f64).unwrap();
    assert_eq!(g.width(), side_cells);
    for row in 0..side_cells {
        for col in 0..side_cells {
            g.set(col, row, cells[row * side_cells + col]);
        }
    }
    g
}

fn arb_raster() -> impl Strategy<Value = (usize, Vec<Option<f64>>)> {
    (4usize..24).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(prop::option::weighted(0.6, -3.0..3.0f64), n * n),
        )
    })
}

proptest! {
    #[test]
    fn closing_matches_nested_loop_reference((n, cells) in arb_raster(), kernel in prop::sample::select(vec![3usize, 5, 7])) {
        let grid = grid_from(&cells, n);
        let want = reference_close(&cells, n, n, kernel);
        for exec in [Execution::Serial, Execution::Parallel] {
            let closed = grid.morphological_close(kernel, exec).unwrap();
            for row in 0..n {
                for col in 0..n {
                    prop_assert_eq!(closed.get(col, row), want[row * n + col], "cell ({}, {})", col, row);
                }
            }
        }
    }

    #[test]
    fn closing_never_lowers_cells((n, cells) in arb_raster()) {
        let grid = grid_from(&cells, n);
        let closed = grid.morphological_close(3, Execution::Serial).unwrap();
        for row in 0..n {
            for col in 0..n {
                if let Some(v) = grid.get(col, row) {
                    prop_assert!(closed.get(col, row).unwrap() >= v);
                }
            }
        }
    }

    #[test]
    fn slope_filter_matches_definition((n, cells) in arb_raster(), max_slope in 0.5..4.0f64) {
        let grid = grid_from(&cells, n);
        let res = grid.resolution();
        let filtered = grid.slope_filter(max_slope, Execution::Parallel).unwrap();
        for row in 0..n {
            for col in 0..n {
                let Some(h) = cells[row * n + col] else {
                    prop_assert!(filtered.is_hole(col, row));
                    continue;
                };
                let mut steep = false;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (c, r) = (col as i64 + dc, row as i64 + dr);
                        if (dc, dr) == (0, 0) || c < 0 || r < 0 || c >= n as i64 || r >= n as i64 {
                            continue;
                        }
                        if let Some(v) = cells[r as usize * n + c as usize] {
                            let dist = res * ((dc * dc + dr * dr) as f64).sqrt();
                            steep |= (v - h).abs() / dist > max_slope;
                        }
                    }
                }
                prop_assert_eq!(filtered.is_hole(col, row), steep);
            }
        }
    }
}
