use std::collections::HashMap;

use treetrack_core::sim::{
    generate_scene, simulate_scan, simulate_trajectory, ForestLayout, ScannerSpec, SceneSpec, Surface, TrajectorySpec,
    TreeSpec,
};
use treetrack_core::{Execution, Point3, Pose};

fn tree(x: f64, y: f64, dbh: f64) -> TreeSpec {
    TreeSpec {
        x,
        y,
        dbh,
        height: 8.0,
        lean: [0.0, 0.0, 1.0],
        taper: 1.0,
    }
}

fn quiet_scanner() -> ScannerSpec {
    ScannerSpec {
        range_noise: 0.0,
        ..ScannerSpec::default()
    }
}

fn world_points(scan: &treetrack_core::sim::SimulatedScan) -> Vec<Point3> {
    scan.frame
        .points
        .iter()
        .map(|p| scan.frame.pose.transform_point(p))
        .collect()
}

#[test]
fn empty_scene_out_of_range_is_empty() {
    let (scene, truth) = generate_scene(&SceneSpec::empty(1)).unwrap();
    assert!(truth.is_empty());
    let pose = Pose::from_yaw(Point3::new(0.0, 0.0, 25.0), 0.0);
    let scan = simulate_scan(&scene, &pose, &ScannerSpec::default(), 0, 0.0, Execution::Parallel);
    assert!(scan.frame.points.is_empty());
}

#[test]
fn nadir_beam_range_on_flat_ground() {
    let (scene, _) = generate_scene(&SceneSpec::empty(2)).unwrap();
    let pose = Pose::from_yaw(Point3::new(0.0, 0.0, 1.0), 0.3);
    for (scanner, tol) in [(quiet_scanner(), 1e-9), (ScannerSpec::default(), 5.0 * 0.01)] {
        let scan = simulate_scan(&scene, &pose, &scanner, 0, 0.0, Execution::Serial);
        let lowest = scanner.beam_elevation(0);
        let expected = 1.0 / (std::f64::consts::FRAC_PI_2 + lowest).cos();
        let nadir: Vec<f64> = scan
            .frame
            .points
            .iter()
            .filter(|p| (p.z.atan2(p.x.hypot(p.y)) - lowest).abs() < 1e-6)
            .map(|p| p.coords.norm())
            .collect();
        assert_eq!(nadir.len(), scanner.horizontal_steps);
        for r in nadir {
            assert!((r - expected).abs() <= tol, "range {r} vs {expected}");
        }
    }
}

#[test]
fn zero_noise_trunk_hits_lie_on_cylinder() {
    let mut spec = SceneSpec::empty(3);
    spec.trees.push(tree(5.0, 0.0, 0.6));
    let (scene, _) = generate_scene(&spec).unwrap();
    let pose = Pose::from_yaw(Point3::new(0.0, 0.0, 1.2), 0.0);
    let scan = simulate_scan(&scene, &pose, &quiet_scanner(), 0, 0.0, Execution::Parallel);
    let world = world_points(&scan);
    let mut hits = 0;
    for (p, label) in world.iter().zip(&scan.labels) {
        if *label == Surface::Trunk(0) {
            hits += 1;
            let radial = (p.x - 5.0).hypot(p.y);
            assert!((radial - 0.3).abs() <= 1e-9, "residual {}", radial - 0.3);
        }
    }
    assert!(hits > 100, "only {hits} trunk hits");
}

/// Distance in the xy plane from `c` to the segment `a`-`b`.
fn segment_distance(a: &Point3, b: &Point3, c: (f64, f64)) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = (((c.0 - a.x) * dx + (c.1 - a.y) * dy) / len2).clamp(0.0, 1.0);
    (a.x + t * dx - c.0).hypot(a.y + t * dy - c.1)
}

#[test]
fn returns_are_not_behind_other_trunks() {
    let mut spec = SceneSpec::empty(4);
    spec.trees.push(tree(4.0, 0.0, 0.5));
    spec.trees.push(tree(8.0, 0.5, 0.8));
    let (scene, _) = generate_scene(&spec).unwrap();
    let pose = Pose::from_yaw(Point3::new(0.0, 0.0, 1.2), 0.0);
    let scan = simulate_scan(&scene, &pose, &quiet_scanner(), 0, 0.0, Execution::Parallel);
    let world = world_points(&scan);
    let mut behind = 0;
    for (p, label) in world.iter().zip(&scan.labels) {
        if *label != Surface::Trunk(0) && p.z < 7.9 {
            let d = segment_distance(&pose.position, p, (4.0, 0.0));
            assert!(
                d >= 0.25 - 1e-9,
                "{label:?} return at {p} passes {d} from the front trunk axis"
            );
            if *label == Surface::Trunk(1) {
                behind += 1;
            }
        }
    }
    assert!(behind > 0, "the rear trunk should be partly visible");
    // The part of trunk 1 inside the shadow of trunk 0 is never hit.
    for (p, label) in world.iter().zip(&scan.labels) {
        if *label == Surface::Trunk(1) {
            assert!(p.y.atan2(p.x).abs() > (0.25f64 / 4.0).asin() - 1e-6);
        }
    }
}

#[test]
fn scans_are_deterministic_across_modes() {
    let spec = SceneSpec::random_forest(
        &ForestLayout {
            trees: 6,
            length: 20.0,
            ..ForestLayout::default()
        },
        11,
    );
    let (scene, _) = generate_scene(&spec).unwrap();
    let pose = Pose::from_yaw(Point3::new(3.0, 0.5, 1.5), 0.4);
    let scanner = ScannerSpec::default();
    let a = simulate_scan(&scene, &pose, &scanner, 7, 3.5, Execution::Parallel);
    let b = simulate_scan(&scene, &pose, &scanner, 7, 3.5, Execution::Serial);
    let c = simulate_scan(&scene, &pose, &scanner, 7, 3.5, Execution::Parallel);
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = simulate_scan(&scene, &pose, &scanner, 8, 3.5, Execution::Parallel);
    assert_ne!(a.frame.points.points(), other.frame.points.points());
}

#[test]
fn trees_near_the_transect_are_seen_in_three_sweeps() {
    let spec = SceneSpec::random_forest(&ForestLayout::default(), 1);
    let (scene, truth) = generate_scene(&spec).unwrap();
    let path = [(0.0, 0.0), (150.0, 0.0)];
    let scans = simulate_trajectory(
        &scene,
        &path,
        &ScannerSpec::default(),
        &TrajectorySpec::default(),
        Execution::Parallel,
    );
    assert_eq!(scans.len(), 76);
    let mut sweeps: HashMap<u64, usize> = HashMap::new();
    for scan in &scans {
        let mut seen: Vec<u64> = scan
            .labels
            .iter()
            .filter_map(|l| match l {
                Surface::Trunk(id) => Some(*id),
                _ => None,
            })
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for id in seen {
            *sweeps.entry(id).or_default() += 1;
        }
    }
    let near: Vec<_> = truth
        .iter()
        .filter(|t| t.base.y.abs() <= 10.0 && (0.0..=150.0).contains(&t.base.x))
        .collect();
    assert!(near.len() >= 25);
    for t in near {
        let n = sweeps.get(&t.id).copied().unwrap_or(0);
        assert!(
            n >= 3,
            "tree {} at ({:.1}, {:.1}) seen in {n} sweeps",
            t.id,
            t.base.x,
            t.base.y
        );
    }
}
