use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Vec3};

/// Height above the base at which trunk diameters are reported, meters.
pub const BREAST_HEIGHT: f64 = 1.4;

const MAX_LEAN_DEG: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("tree {index}: dbh {dbh} outside (0, 2) m")]
    Dbh { index: usize, dbh: f64 },
    #[error("tree {index}: lean {degrees:.2} deg exceeds {MAX_LEAN_DEG} deg")]
    Lean { index: usize, degrees: f64 },
    #[error("tree {index}: {reason}")]
    Tree { index: usize, reason: &'static str },
    #[error("trees {a} and {b} overlap: bases {distance:.3} m apart")]
    Overlap { a: usize, b: usize, distance: f64 },
    #[error("invalid scene: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    /// Wave vector, radians per meter.
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
}

/// Smooth heightfield: a base height plus a sum of plane waves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Terrain {
    pub base_height: f64,
    pub waves: Vec<Wave>,
}

impl Terrain {
    pub fn flat(height: f64) -> Self {
        Self {
            base_height: height,
            waves: Vec::new(),
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.base_height
            + self
                .waves
                .iter()
                .map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin())
                .sum::<f64>()
    }

    pub fn max_height(&self) -> f64 {
        self.base_height + self.waves.iter().map(|w| w.amplitude.abs()).sum::<f64>()
    }

    /// Upper bound of the horizontal gradient magnitude.
    pub fn max_gradient(&self) -> f64 {
        self.waves.iter().map(|w| w.amplitude.abs() * w.kx.hypot(w.ky)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub x: f64,
    pub y: f64,
    /// Diameter at breast height, meters.
    pub dbh: f64,
    /// Vertical height of the trunk above its base, meters.
    pub height: f64,
    /// Trunk direction; normalized on generation.
    pub lean: [f64; 3],
    /// Top radius over bottom radius, in (0, 1].
    pub taper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrubSpec {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanopySpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub terrain: Terrain,
    pub trees: Vec<TreeSpec>,
    #[serde(default)]
    pub shrubs: Vec<ShrubSpec>,
    #[serde(default)]
    pub canopy: Vec<CanopySpec>,
    /// Chance that a ray crossing a shrub returns from inside it.
    #[serde(default = "default_shrub_density")]
    pub shrub_density: f64,
    /// Chance that a ray crossing a canopy blob returns from inside it.
    #[serde(default = "default_canopy_density")]
    pub canopy_density: f64,
    pub seed: u64,
}

fn default_shrub_density() -> f64 {
    0.6
}

fn default_canopy_density() -> f64 {
    0.15
}

/// Knobs of [`SceneSpec::random_forest`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForestLayout {
    pub trees: usize,
    /// Trees are placed along the x axis over `[0, length]`.
    pub length: f64,
    /// Lateral distance of trees from the x axis, meters.
    pub lateral: (f64, f64),
    pub dbh_range: (f64, f64),
    pub height_range: (f64, f64),
    pub max_lean_deg: f64,
    pub min_spacing: f64,
    pub shrubs: usize,
    pub terrain_amplitude: f64,
}

impl Default for ForestLayout {
    fn default() -> Self {
        Self {
            trees: 30,
            length: 150.0,
            lateral: (1.5, 10.0),
            dbh_range: (0.10, 0.80),
            height_range: (10.0, 18.0),
            max_lean_deg: 8.0,
            min_spacing: 3.0,
            shrubs: 15,
            terrain_amplitude: 0.4,
        }
    }
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            terrain: Terrain::flat(0.0),
            trees: Vec::new(),
            shrubs: Vec::new(),
            canopy: Vec::new(),
            shrub_density: default_shrub_density(),
            canopy_density: default_canopy_density(),
            seed,
        }
    }

    /// Random transect forest: trees scattered on both sides of the x axis
    /// with gently rolling terrain, a canopy blob on every trunk and a few
    /// shrubs in between.
    pub fn random_forest(layout: &ForestLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..3)
            .map(|i| {
                let wavelength = rng.random_range(25.0..60.0);
                let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    amplitude: layout.terrain_amplitude / (1.0 + i as f64),
                    kx: k * heading.cos(),
                    ky: k * heading.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let mut trees: Vec<TreeSpec> = Vec::new();
        let mut attempts = 0;
        while trees.len() < layout.trees && attempts < 100_000 {
            attempts += 1;
            let x = rng.random_range(0.0..layout.length);
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let y = side * rng.random_range(layout.lateral.0..layout.lateral.1);
            if trees.iter().any(|t| (t.x - x).hypot(t.y - y) < layout.min_spacing) {
                continue;
            }
            let tilt = rng.random_range(0.0..layout.max_lean_deg).to_radians();
            let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            trees.push(TreeSpec {
                x,
                y,
                dbh: rng.random_range(layout.dbh_range.0..layout.dbh_range.1),
                height: rng.random_range(layout.height_range.0..layout.height_range.1),
                lean: [tilt.sin() * heading.cos(), tilt.sin() * heading.sin(), tilt.cos()],
                taper: rng.random_range(0.5..0.8),
            });
        }
        let terrain = Terrain {
            base_height: 0.0,
            waves,
        };
        let canopy = trees
            .iter()
            .map(|t| {
                let r = rng.random_range(2.0..3.5);
                let axis = Vec3::from(t.lean).normalize();
                let top = Vec3::new(t.x, t.y, terrain.height(t.x, t.y)) + axis * (t.height / axis.z);
                CanopySpec {
                    center: [top.x, top.y, top.z + 0.5 * r],
                    radius: r,
                }
            })
            .collect();
        let mut shrubs = Vec::new();
        attempts = 0;
        while shrubs.len() < layout.shrubs && attempts < 100_000 {
            attempts += 1;
            let x = rng.random_range(0.0..layout.length);
            let y = rng.random_range(-layout.lateral.1..layout.lateral.1);
            let radius = rng.random_range(0.3..0.8);
            if y.abs() < 1.0 + radius || trees.iter().any(|t| (t.x - x).hypot(t.y - y) < radius + 1.5) {
                continue;
            }
            shrubs.push(ShrubSpec {
                x,
                y,
                radius,
                height: rng.random_range(0.3..1.0),
            });
        }
        Self {
            terrain,
            trees,
            shrubs,
            canopy,
            shrub_density: default_shrub_density(),
            canopy_density: default_canopy_density(),
            seed,
        }
    }
}

/// A tapered trunk: radius falls linearly from `radius_base` at `s = 0` to
/// `radius_top` at `s = length`, where `s` is the distance along `axis`
/// from `base`. The surface extends below the base so sloped ground
/// closes it off.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    pub id: u64,
    pub base: Point3,
    pub axis: Vec3,
    pub radius_base: f64,
    pub radius_top: f64,
    pub length: f64,
}

/// Depth the trunk surface continues below its base point, meters.
pub(crate) const TRUNK_SINK: f64 = 1.0;

impl Trunk {
    pub fn radius_at(&self, s: f64) -> f64 {
        self.radius_base - (self.radius_base - self.radius_top) * s / self.length
    }

    /// Axial coordinate of a point.
    pub fn axial(&self, p: &Point3) -> f64 {
        (p - self.base).dot(&self.axis)
    }

    /// Distance of a point to the axis line.
    pub fn radial(&self, p: &Point3) -> f64 {
        let v = p - self.base;
        (v - self.axis * v.dot(&self.axis)).norm()
    }

    pub fn top(&self) -> Point3 {
        self.base + self.axis * self.length
    }
}

/// Sparse scattering volume: an axis-aligned ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub center: Point3,
    pub radii: Vec3,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub terrain: Terrain,
    pub trunks: Vec<Trunk>,
    pub shrubs: Vec<Blob>,
    pub canopy: Vec<Blob>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTree {
    pub id: u64,
    pub base: Point3,
    pub dbh: f64,
    pub axis: Vec3,
}

/// Validates a spec and builds the scene with its ground truth.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Scene, Vec<GroundTruthTree>), SceneError> {
    if !(0.0..=1.0).contains(&spec.shrub_density) || !(0.0..=1.0).contains(&spec.canopy_density) {
        return Err(SceneError::Invalid("blob densities must lie in [0, 1]"));
    }
    let mut trunks = Vec::with_capacity(spec.trees.len());
    let mut truth = Vec::with_capacity(spec.trees.len());
    for (index, t) in spec.trees.iter().enumerate() {
        if !(t.dbh > 0.0 && t.dbh < 2.0) {
            return Err(SceneError::Dbh { index, dbh: t.dbh });
        }
        if !(t.height > BREAST_HEIGHT) {
            return Err(SceneError::Tree {
                index,
                reason: "height must exceed breast height",
            });
        }
        if !(t.taper > 0.0 && t.taper <= 1.0) {
            return Err(SceneError::Tree {
                index,
                reason: "taper must lie in (0, 1]",
            });
        }
        let lean = Vec3::from(t.lean);
        if !(lean.norm() > 0.0) || !lean.iter().all(|v| v.is_finite()) {
            return Err(SceneError::Tree {
                index,
                reason: "lean must be a non-zero vector",
            });
        }
        let axis = lean.normalize();
        let degrees = axis.z.clamp(-1.0, 1.0).acos().to_degrees();
        if degrees > MAX_LEAN_DEG {
            return Err(SceneError::Lean { index, degrees });
        }
        let base = Point3::new(t.x, t.y, spec.terrain.height(t.x, t.y));
        let length = t.height / axis.z;
        let s_bh = BREAST_HEIGHT / axis.z;
        let radius_base = 0.5 * t.dbh / (1.0 - (1.0 - t.taper) * s_bh / length);
        let trunk = Trunk {
            id: index as u64,
            base,
            axis,
            radius_base,
            radius_top: radius_base * t.taper,
            length,
        };
        truth.push(GroundTruthTree {
            id: index as u64,
            base,
            dbh: 2.0 * trunk.radius_at(s_bh),
            axis,
        });
        trunks.push(trunk);
    }
    for (a, ta) in trunks.iter().enumerate() {
        for (b, tb) in trunks.iter().enumerate().skip(a + 1) {
            let distance = (ta.base.xy() - tb.base.xy()).norm();
            if distance < ta.radius_base + tb.radius_base {
                return Err(SceneError::Overlap { a, b, distance });
            }
        }
    }
    let shrubs = spec
        .shrubs
        .iter()
        .map(|s| Blob {
            center: Point3::new(s.x, s.y, spec.terrain.height(s.x, s.y) + 0.5 * s.height),
            radii: Vec3::new(s.radius, s.radius, 0.5 * s.height),
            density: spec.shrub_density,
        })
        .collect();
    let canopy = spec
        .canopy
        .iter()
        .map(|c| Blob {
            center: Point3::from(c.center),
            radii: Vec3::repeat(c.radius),
            density: spec.canopy_density,
        })
        .collect();
    Ok((
        Scene {
            terrain: spec.terrain.clone(),
            trunks,
            shrubs,
            canopy,
            seed: spec.seed,
        },
        truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_tree(x: f64, y: f64, dbh: f64) -> TreeSpec {
        TreeSpec {
            x,
            y,
            dbh,
            height: 12.0,
            lean: [0.0, 0.0, 1.0],
            taper: 0.6,
        }
    }

    #[test]
    fn empty_spec_has_no_truth() {
        let (scene, truth) = generate_scene(&SceneSpec::empty(1)).unwrap();
        assert!(truth.is_empty());
        assert!(scene.trunks.is_empty());
    }

    #[test]
    fn single_tree_truth() {
        let mut spec = SceneSpec::empty(1);
        spec.trees.push(one_tree(5.0, 5.0, 0.4));
        let (scene, truth) = generate_scene(&spec).unwrap();
        assert_eq!(truth[0].base, Point3::new(5.0, 5.0, 0.0));
        assert!((truth[0].dbh - 0.4).abs() < 1e-12);
        let t = &scene.trunks[0];
        assert!((2.0 * t.radius_at(BREAST_HEIGHT) - 0.4).abs() < 1e-12);
        assert!(t.radius_top < t.radius_base);
    }

    #[test]
    fn leaning_tree_truth_at_breast_height() {
        let mut spec = SceneSpec::empty(1);
        let mut t = one_tree(0.0, 0.0, 0.3);
        let a = 10f64.to_radians();
        t.lean = [a.sin(), 0.0, a.cos()];
        spec.trees.push(t);
        let (scene, truth) = generate_scene(&spec).unwrap();
        let trunk = &scene.trunks[0];
        // the point of the axis 1.4 m above the base
        let s = BREAST_HEIGHT / trunk.axis.z;
        assert!(((trunk.base + trunk.axis * s).z - BREAST_HEIGHT).abs() < 1e-12);
        assert!((2.0 * trunk.radius_at(s) - truth[0].dbh).abs() < 1e-12);
        assert!((truth[0].dbh - 0.3).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        let mut spec = SceneSpec::empty(1);
        spec.trees.push(one_tree(0.0, 0.0, 2.5));
        assert!(matches!(generate_scene(&spec), Err(SceneError::Dbh { .. })));
        spec.trees[0].dbh = 0.3;
        spec.trees[0].lean = [1.0, 0.0, 1.0];
        assert!(matches!(generate_scene(&spec), Err(SceneError::Lean { .. })));
        spec.trees[0].lean = [0.0, 0.0, 1.0];
        spec.trees.push(one_tree(0.2, 0.0, 0.3));
        assert!(matches!(
            generate_scene(&spec),
            Err(SceneError::Overlap { a: 0, b: 1, .. })
        ));
    }

    #[test]
    fn random_forest_is_deterministic_and_valid() {
        let layout = ForestLayout::default();
        let a = SceneSpec::random_forest(&layout, 11);
        let b = SceneSpec::random_forest(&layout, 11);
        assert_eq!(a, b);
        assert_eq!(a.trees.len(), 30);
        let (sa, ta) = generate_scene(&a).unwrap();
        let (sb, tb) = generate_scene(&b).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(ta, tb);
        assert!(ta.iter().all(|t| (0.1..0.8).contains(&t.dbh)));
        assert_ne!(SceneSpec::random_forest(&layout, 12), a);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SceneSpec::random_forest(&ForestLayout::default(), 3);
        let text = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
