use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::{map_slice, Execution};
use crate::geometry::{Point3, Pose};

use super::scanner::{simulate_scan, ScannerSpec, SimulatedScan};
use super::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// Sensor height above the terrain, meters.
    pub sensor_height: f64,
    /// Walking speed used to stamp frames, m/s.
    pub speed: f64,
    /// Gaussian pose perturbation (position sigma in meters, yaw sigma in
    /// radians). `None` reports exact poses.
    pub pose_noise: Option<(f64, f64)>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            sensor_height: 1.2,
            speed: 1.0,
            pose_noise: None,
        }
    }
}

/// A sampled position along a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Arc length from the start of the path.
    pub distance: f64,
}

/// Samples `path` every `step` meters of arc length, always including both
/// endpoints. A path with no length yields exactly one sample.
pub fn sample_path(path: &[(f64, f64)], step: f64) -> Vec<PathSample> {
    assert!(step > 0.0, "sample step must be positive");
    let Some(&(x0, y0)) = path.first() else {
        return Vec::new();
    };
    let segments: Vec<_> = path
        .windows(2)
        .map(|w| (w[0], w[1], (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)))
        .filter(|s| s.2 > 0.0)
        .collect();
    let total: f64 = segments.iter().map(|s| s.2).sum();
    if segments.is_empty() {
        return vec![PathSample {
            x: x0,
            y: y0,
            yaw: 0.0,
            distance: 0.0,
        }];
    }
    let mut stations: Vec<f64> = (0..)
        .map(|k| k as f64 * step)
        .take_while(|&s| s < total - 1e-9)
        .collect();
    stations.push(total);

    let mut out = Vec::with_capacity(stations.len());
    let mut seg = 0;
    let mut seg_start = 0.0;
    for s in stations {
        while seg + 1 < segments.len() && s > seg_start + segments[seg].2 {
            seg_start += segments[seg].2;
            seg += 1;
        }
        let ((ax, ay), (bx, by), len) = segments[seg];
        let u = ((s - seg_start) / len).clamp(0.0, 1.0);
        out.push(PathSample {
            x: ax + u * (bx - ax),
            y: ay + u * (by - ay),
            yaw: (by - ay).atan2(bx - ax),
            distance: s,
        });
    }
    out
}

/// Poses along `path`, one per trigger distance, at a fixed height above
/// the scene terrain.
pub fn trajectory_poses(
    scene: &Scene,
    path: &[(f64, f64)],
    scanner: &ScannerSpec,
    spec: &TrajectorySpec,
) -> Vec<(f64, Pose)> {
    let samples = sample_path(path, scanner.trigger_distance);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::dbh::tree_seed(scene.seed, 0x7261_6a65));
    let noise = spec.pose_noise.map(|(p, y)| {
        (
            Normal::new(0.0, p).expect("pose sigma"),
            Normal::new(0.0, y).expect("yaw sigma"),
        )
    });
    samples
        .iter()
        .map(|s| {
            let z = scene.terrain.height(s.x, s.y) + spec.sensor_height;
            let mut position = Point3::new(s.x, s.y, z);
            let mut yaw = s.yaw;
            if let Some((pn, yn)) = &noise {
                position.x += pn.sample(&mut rng);
                position.y += pn.sample(&mut rng);
                position.z += pn.sample(&mut rng);
                yaw += yn.sample(&mut rng);
            }
            (s.distance / spec.speed, Pose::from_yaw(position, yaw))
        })
        .collect()
}

/// One simulated sweep per pose along `path`. Frames are numbered from 0.
pub fn simulate_trajectory(
    scene: &Scene,
    path: &[(f64, f64)],
    scanner: &ScannerSpec,
    spec: &TrajectorySpec,
    exec: Execution,
) -> Vec<SimulatedScan> {
    let poses: Vec<(usize, f64, Pose)> = trajectory_poses(scene, path, scanner, spec)
        .into_iter()
        .enumerate()
        .map(|(i, (t, p))| (i, t, p))
        .collect();
    // Rays inside each sweep already fan out, so sweeps run one at a time
    // in parallel mode and nest serially otherwise.
    map_slice(Execution::Serial, &poses, |&(i, t, pose)| {
        simulate_scan(scene, &pose, scanner, i as u64, t, exec)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{generate_scene, SceneSpec};

    #[test]
    fn straight_ten_meters_gives_six_poses() {
        let s = sample_path(&[(0.0, 0.0), (10.0, 0.0)], 2.0);
        assert_eq!(s.len(), 6);
        assert_eq!(s.last().unwrap().x, 10.0);
        for (k, p) in s.iter().enumerate() {
            assert!((p.distance - 2.0 * k as f64).abs() < 1e-12);
            assert_eq!(p.yaw, 0.0);
        }
    }

    #[test]
    fn zero_length_path_gives_one_pose() {
        assert_eq!(sample_path(&[(3.0, 4.0)], 2.0).len(), 1);
        assert_eq!(sample_path(&[(3.0, 4.0), (3.0, 4.0)], 2.0).len(), 1);
        assert!(sample_path(&[], 2.0).is_empty());
    }

    #[test]
    fn uneven_length_keeps_endpoint() {
        let s = sample_path(&[(0.0, 0.0), (5.0, 0.0), (5.0, 4.0)], 2.0);
        let d: Vec<f64> = s.iter().map(|p| p.distance).collect();
        assert_eq!(d, vec![0.0, 2.0, 4.0, 6.0, 8.0, 9.0]);
        assert!((s[3].x - 5.0).abs() < 1e-12 && (s[3].y - 1.0).abs() < 1e-12);
        assert!((s[3].yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn poses_follow_terrain() {
        let (scene, _) = generate_scene(&SceneSpec::empty(1)).unwrap();
        let poses = trajectory_poses(
            &scene,
            &[(0.0, 0.0), (4.0, 0.0)],
            &ScannerSpec::default(),
            &TrajectorySpec::default(),
        );
        assert_eq!(poses.len(), 3);
        assert_eq!(poses[2].0, 4.0);
        assert!((poses[1].1.position.z - (scene.terrain.height(2.0, 0.0) + 1.2)).abs() < 1e-12);
    }
}
