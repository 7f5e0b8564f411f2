//! Synthetic forest scenes and a ray-casting LiDAR model.

mod scanner;
mod scene;
mod trajectory;

pub use scanner::{
    intersect_blob, intersect_terrain, intersect_trunk, simulate_scan, ScannerSpec, SimulatedScan, Surface,
};
pub use scene::{
    generate_scene, Blob, CanopySpec, ForestLayout, GroundTruthTree, Scene, SceneError, SceneSpec, ShrubSpec, Terrain,
    TreeSpec, Trunk, Wave, BREAST_HEIGHT,
};
pub use trajectory::{sample_path, simulate_trajectory, trajectory_poses, PathSample, TrajectorySpec};
