use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::{map_range, Execution};
use crate::geometry::{Frame, Point3, PointCloud, Pose, Vec3};
use crate::scan::ScanFrame;

use super::scene::{Blob, Scene, Terrain, Trunk, TRUNK_SINK};

/// Multi-beam spinning LiDAR model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScannerSpec {
    /// Total vertical field of view, symmetric about the horizon, degrees.
    pub vertical_fov_deg: f64,
    pub beams: usize,
    pub horizontal_steps: usize,
    pub max_range: f64,
    /// Standard deviation of the Gaussian range error, meters.
    pub range_noise: f64,
    /// Travel between consecutive sweeps, meters.
    pub trigger_distance: f64,
}

impl Default for ScannerSpec {
    fn default() -> Self {
        Self {
            vertical_fov_deg: 90.0,
            beams: 128,
            horizontal_steps: 1024,
            max_range: 20.0,
            range_noise: 0.01,
            trigger_distance: 2.0,
        }
    }
}

impl ScannerSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.vertical_fov_deg > 0.0 && self.vertical_fov_deg <= 180.0) {
            return Err(format!(
                "vertical fov must be in (0, 180], got {}",
                self.vertical_fov_deg
            ));
        }
        if self.beams == 0 || self.horizontal_steps == 0 {
            return Err("beam and step counts must be positive".into());
        }
        if !(self.max_range > 0.0 && self.trigger_distance > 0.0 && self.range_noise >= 0.0) {
            return Err("range, trigger distance and noise must be positive".into());
        }
        Ok(())
    }

    /// Elevation of a beam in radians, lowest beam first.
    pub fn beam_elevation(&self, beam: usize) -> f64 {
        let half = 0.5 * self.vertical_fov_deg.to_radians();
        if self.beams == 1 {
            return 0.0;
        }
        -half + 2.0 * half * beam as f64 / (self.beams - 1) as f64
    }

    pub fn azimuth(&self, step: usize) -> f64 {
        std::f64::consts::TAU * step as f64 / self.horizontal_steps as f64
    }

    /// Sensor-frame unit direction of one ray.
    pub fn ray_direction(&self, beam: usize, step: usize) -> Vec3 {
        let (el, az) = (self.beam_elevation(beam), self.azimuth(step));
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Which scene element produced a return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Terrain,
    Trunk(u64),
    Shrub(usize),
    Canopy(usize),
}

/// A simulated sweep with a label per returned point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScan {
    pub frame: ScanFrame,
    pub labels: Vec<Surface>,
    /// Noise-free range of every return, meters.
    pub true_ranges: Vec<f64>,
}

const MIN_HIT_DISTANCE: f64 = 1e-6;

/// Smallest `t > MIN_HIT_DISTANCE` where the ray meets the lateral surface
/// of a tapered trunk between its sunk foot and its top.
pub fn intersect_trunk(trunk: &Trunk, origin: &Point3, dir: &Vec3) -> Option<f64> {
    let q = origin - trunk.base;
    let s0 = q.dot(&trunk.axis);
    let ds = dir.dot(&trunk.axis);
    let w0 = q - trunk.axis * s0;
    let wd = dir - trunk.axis * ds;
    let k = (trunk.radius_base - trunk.radius_top) / trunk.length;
    let r0 = trunk.radius_base - k * s0;
    let kk = k * ds;
    // |w0 + t wd|^2 = (r0 - kk t)^2
    let a = wd.norm_squared() - kk * kk;
    let b = 2.0 * (w0.dot(&wd) + r0 * kk);
    let c = w0.norm_squared() - r0 * r0;
    let roots = solve_quadratic(a, b, c)?;
    roots.into_iter().flatten().find(|&t| {
        if t <= MIN_HIT_DISTANCE {
            return false;
        }
        let s = s0 + t * ds;
        s >= -TRUNK_SINK && s <= trunk.length && r0 - kk * t > 0.0
    })
}

/// Real roots in ascending order.
fn solve_quadratic(a: f64, b: f64, c: f64) -> Option<[Option<f64>; 2]> {
    if a.abs() < 1e-15 {
        if b.abs() < 1e-15 {
            return None;
        }
        return Some([Some(-c / b), None]);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some([Some(t1.min(t2)), Some(t1.max(t2))])
}

/// Entry and exit distances of the ray through an ellipsoid.
pub fn intersect_blob(blob: &Blob, origin: &Point3, dir: &Vec3) -> Option<(f64, f64)> {
    let o = (origin - blob.center).component_div(&blob.radii);
    let d = dir.component_div(&blob.radii);
    let [t0, t1] = solve_quadratic(d.norm_squared(), 2.0 * o.dot(&d), o.norm_squared() - 1.0)?;
    let (t0, t1) = (t0?, t1?);
    (t1 > MIN_HIT_DISTANCE).then_some((t0.max(MIN_HIT_DISTANCE), t1))
}

/// First crossing of the terrain surface within `max_t`.
pub fn intersect_terrain(terrain: &Terrain, origin: &Point3, dir: &Vec3, max_t: f64) -> Option<f64> {
    let f = |t: f64| {
        let p = origin + dir * t;
        p.z - terrain.height(p.x, p.y)
    };
    if terrain.waves.is_empty() {
        if dir.z >= 0.0 {
            return None;
        }
        let t = (terrain.base_height - origin.z) / dir.z;
        return (t > MIN_HIT_DISTANCE && t <= max_t).then_some(t);
    }
    if dir.z >= 0.0 && origin.z > terrain.max_height() {
        return None;
    }
    // The height gap shrinks at most this fast along the ray.
    let lipschitz = dir.z.abs() + terrain.max_gradient() * dir.xy().norm();
    let mut t_prev = 0.0;
    let mut f_prev = f(0.0);
    if f_prev <= 0.0 {
        return None;
    }
    while t_prev < max_t {
        let step = (f_prev / lipschitz.max(1e-12)).max(0.05);
        let t = (t_prev + step).min(max_t);
        let ft = f(t);
        if ft <= 0.0 {
            return Some(refine_root(&f, t_prev, f_prev, t, ft));
        }
        if t >= max_t {
            break;
        }
        t_prev = t;
        f_prev = ft;
    }
    None
}

/// Illinois regula falsi on a bracket with `f(lo) > 0 >= f(hi)`.
fn refine_root(f: &impl Fn(f64) -> f64, mut lo: f64, mut f_lo: f64, mut hi: f64, mut f_hi: f64) -> f64 {
    let mut side = 0;
    for _ in 0..100 {
        if hi - lo <= 1e-12 || f_hi == 0.0 {
            break;
        }
        let t = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        let t = if t > lo && t < hi { t } else { 0.5 * (lo + hi) };
        let ft = f(t);
        if ft > 0.0 {
            lo = t;
            f_lo = ft;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = t;
            f_hi = ft;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if ft.abs() < 1e-13 {
            return t;
        }
    }
    hi
}

/// Scene elements that can be reached from one sensor position.
struct Visible<'a> {
    trunks: Vec<&'a Trunk>,
    shrubs: Vec<(usize, &'a Blob)>,
    canopy: Vec<(usize, &'a Blob)>,
}

impl<'a> Visible<'a> {
    fn new(scene: &'a Scene, origin: &Point3, max_range: f64) -> Self {
        let near_segment = |t: &Trunk| {
            // horizontal distance from the sensor to the trunk's footprint segment
            let a = t.base.xy() - t.axis.xy() * (TRUNK_SINK);
            let b = t.top().xy();
            let p = origin.xy();
            let ab = b - a;
            let u = if ab.norm_squared() > 0.0 {
                ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (a + ab * u - p).norm() <= max_range + t.radius_base
        };
        let blob_near = |b: &Blob| (b.center - origin).norm() <= max_range + b.radii.max();
        Self {
            trunks: scene.trunks.iter().filter(|t| near_segment(t)).collect(),
            shrubs: scene.shrubs.iter().enumerate().filter(|(_, b)| blob_near(b)).collect(),
            canopy: scene.canopy.iter().enumerate().filter(|(_, b)| blob_near(b)).collect(),
        }
    }
}

fn cast(
    scene: &Scene,
    visible: &Visible,
    origin: &Point3,
    dir: &Vec3,
    max_range: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    let mut consider = |t: f64, s: Surface| {
        if t <= max_range && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, s));
        }
    };
    if let Some(t) = intersect_terrain(&scene.terrain, origin, dir, max_range) {
        consider(t, Surface::Terrain);
    }
    for trunk in &visible.trunks {
        if let Some(t) = intersect_trunk(trunk, origin, dir) {
            consider(t, Surface::Trunk(trunk.id));
        }
    }
    // Porous volumes draw from the ray's stream in a fixed order so the
    // outcome does not depend on what else the ray hits.
    let porous = visible
        .shrubs
        .iter()
        .map(|&(i, b)| (Surface::Shrub(i), b))
        .chain(visible.canopy.iter().map(|&(i, b)| (Surface::Canopy(i), b)));
    for (surface, blob) in porous {
        if let Some((t0, t1)) = intersect_blob(blob, origin, dir) {
            let returns = rng.random_bool(blob.density);
            let depth: f64 = rng.random_range(0.0..0.5);
            if returns {
                consider(t0 + depth * (t1 - t0), surface);
            }
        }
    }
    best
}

fn mix_seed(seed: u64, a: u64) -> u64 {
    crate::dbh::tree_seed(seed, a)
}

/// Casts every ray of one sweep from `pose`. Returns are perturbed along
/// the ray by Gaussian range noise and reported in the sensor frame.
pub fn simulate_scan(
    scene: &Scene,
    pose: &Pose,
    scanner: &ScannerSpec,
    frame_id: u64,
    timestamp: f64,
    exec: Execution,
) -> SimulatedScan {
    let origin = pose.position;
    let visible = Visible::new(scene, &origin, scanner.max_range);
    let scan_seed = mix_seed(scene.seed, frame_id.wrapping_add(1));
    let noise = Normal::new(0.0, scanner.range_noise.max(0.0)).expect("finite noise");
    let rows = map_range(exec, 0..scanner.beams, |beam| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scan_seed, beam as u64));
        let mut row = Vec::new();
        for step in 0..scanner.horizontal_steps {
            let local = scanner.ray_direction(beam, step);
            let dir = pose.orientation * local;
            let hit = cast(scene, &visible, &origin, &dir, scanner.max_range, &mut rng);
            let n: f64 = noise.sample(&mut rng);
            if let Some((t, surface)) = hit {
                let range = t + if scanner.range_noise > 0.0 { n } else { 0.0 };
                row.push((Point3::from(local * range), surface, t));
            }
        }
        row
    });
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut true_ranges = Vec::new();
    for (p, s, t) in rows.into_iter().flatten() {
        points.push(p);
        labels.push(s);
        true_ranges.push(t);
    }
    SimulatedScan {
        frame: ScanFrame {
            id: frame_id,
            timestamp,
            pose: *pose,
            points: PointCloud::from_finite(points, Frame::Sensor),
        },
        labels,
        true_ranges,
    }
}
