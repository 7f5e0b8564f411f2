//! The online per-frame chain: world transform, elevation update,
//! downsampling, clustering, tracking, base segmentation and DBH.

mod config;

use std::collections::BTreeSet;
use std::thread::JoinHandle;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use config::{ConfigError, PipelineConfig};

use crate::clustering::euclidean_cluster;
use crate::dbh::estimate_dbh;
use crate::elevation::{filter_chain, ground_points, ElevationError, ElevationGrid};
use crate::exec::{map_mut, Execution};
use crate::geometry::{transform_cloud, GeometryError, Point3, PointCloud};
use crate::scan::ScanFrame;
use crate::spatial::SpatialIndex;
use crate::tracker::{segment_base, TrackOutcome, Tree, TreeId, TreeInventory};
use crate::voxel::voxel_downsample;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {got} (t = {got_t}) arrived after frame {previous} (t = {previous_t})")]
    OutOfOrder {
        previous: u64,
        previous_t: f64,
        got: u64,
        got_t: f64,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Elevation(#[from] ElevationError),
    #[error("elevation filter thread panicked")]
    FilterPanicked,
}

/// Wall time of each stage of one frame, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub transform: f64,
    pub elevation_update: f64,
    pub downsampling: f64,
    pub euclidean_clustering: f64,
    pub tree_tracking: f64,
    pub base_segmentation: f64,
    pub circle_fitting: f64,
    pub total: f64,
}

impl StageTimes {
    pub const NAMES: [&'static str; 8] = [
        "transform",
        "elevation_update",
        "downsampling",
        "euclidean_clustering",
        "tree_tracking",
        "base_segmentation",
        "circle_fitting",
        "total",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.transform,
            self.elevation_update,
            self.downsampling,
            self.euclidean_clustering,
            self.tree_tracking,
            self.base_segmentation,
            self.circle_fitting,
            self.total,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame_id: u64,
    pub input_points: usize,
    pub downsampled_points: usize,
    pub clusters: usize,
    pub rejected_clusters: usize,
    pub updated_trees: Vec<TreeId>,
    pub retired_trees: Vec<TreeId>,
    /// Whether an elevation filter run was started on this frame.
    pub refilter_started: bool,
    pub times: StageTimes,
}

enum PendingFilter {
    Running(JoinHandle<Result<ElevationGrid, ElevationError>>),
    Done(Result<ElevationGrid, ElevationError>),
}

/// Result of one elevation filter run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterRun {
    /// Frame at which the run was started.
    pub frame_id: u64,
    pub seconds: f64,
}

/// Online pipeline state.
///
/// Elevation filtering runs on a background thread in parallel mode and
/// inline in serial mode. Either way its output becomes visible to base
/// segmentation at the start of the next frame, so both modes see the same
/// ground at every step.
pub struct Pipeline {
    config: PipelineConfig,
    exec: Execution,
    inventory: TreeInventory,
    raw: Option<ElevationGrid>,
    current: Option<ElevationGrid>,
    previous: Option<ElevationGrid>,
    ground: Option<SpatialIndex>,
    pending: Option<(u64, Instant, PendingFilter)>,
    last_frame: Option<(u64, f64, Point3)>,
    last_processed: Option<Point3>,
    travel_since_refilter: f64,
    dirty: BTreeSet<TreeId>,
    reports: Vec<FrameReport>,
    filter_runs: Vec<FilterRun>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, exec: Execution) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            config,
            exec,
            inventory: TreeInventory::new(),
            raw: None,
            current: None,
            previous: None,
            ground: None,
            pending: None,
            last_frame: None,
            last_processed: None,
            travel_since_refilter: 0.0,
            dirty: BTreeSet::new(),
            reports: Vec::new(),
            filter_runs: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn inventory(&self) -> &TreeInventory {
        &self.inventory
    }

    pub fn into_inventory(self) -> TreeInventory {
        self.inventory
    }

    pub fn reports(&self) -> &[FrameReport] {
        &self.reports
    }

    pub fn filter_runs(&self) -> &[FilterRun] {
        &self.filter_runs
    }

    pub fn raw_grid(&self) -> Option<&ElevationGrid> {
        self.raw.as_ref()
    }

    /// Most recent published filtered grid.
    pub fn filtered_grid(&self) -> Option<&ElevationGrid> {
        self.current.as_ref()
    }

    /// Trees whose base or DBH still needs (re)estimation.
    pub fn pending_trees(&self) -> Vec<TreeId> {
        self.dirty.iter().copied().collect()
    }

    /// Runs one frame through the chain. Frames must arrive with strictly
    /// increasing id and timestamp. Returns `None` if the frame was skipped
    /// by the scan trigger.
    pub fn process_frame(&mut self, frame: &ScanFrame) -> Result<Option<&FrameReport>, PipelineError> {
        let start = Instant::now();
        if let Some((id, t, _)) = self.last_frame {
            if frame.id <= id || frame.timestamp <= t {
                return Err(PipelineError::OutOfOrder {
                    previous: id,
                    previous_t: t,
                    got: frame.id,
                    got_t: frame.timestamp,
                });
            }
        }
        let position = frame.pose.position;
        if let Some((_, _, prev)) = self.last_frame {
            self.travel_since_refilter += (position - prev).norm();
        }
        self.last_frame = Some((frame.id, frame.timestamp, position));
        self.publish_filter()?;

        if let Some(last) = self.last_processed {
            if (position - last).norm() < self.config.scan_trigger_distance {
                return Ok(None);
            }
        }
        self.last_processed = Some(position);

        let mut times = StageTimes::default();
        let mut lap = Instant::now();
        let mut tick = |slot: &mut f64| {
            let now = Instant::now();
            *slot = (now - lap).as_secs_f64();
            lap = now;
        };

        let world = transform_cloud(&frame.points, &frame.pose)?;
        tick(&mut times.transform);

        let cfg = &self.config;
        let raw = match &mut self.raw {
            Some(raw) => raw,
            slot => slot.insert(ElevationGrid::new(
                &position,
                cfg.elevation_resolution,
                cfg.elevation_side_length,
            )?),
        };
        raw.integrate(&world)?;
        tick(&mut times.elevation_update);

        let world = if cfg.ground_clearance > 0.0 {
            above_ground(&world, raw, cfg.ground_clearance)
        } else {
            world
        };
        let down = voxel_downsample(&world, cfg.voxel_size).expect("voxel size validated");
        tick(&mut times.downsampling);

        let clusters = euclidean_cluster(&down, cfg.cluster_tolerance, cfg.cluster_min_size, cfg.cluster_max_size)
            .expect("cluster parameters validated");
        tick(&mut times.euclidean_clustering);

        let outcome = self.inventory.track(&down, &clusters, &cfg.tracker, self.exec);
        self.note_outcome(&outcome);
        tick(&mut times.tree_tracking);

        let mut refilter_started = false;
        if self.travel_since_refilter >= self.config.refilter_distance {
            self.start_filter(frame.id, &position);
            self.travel_since_refilter = 0.0;
            refilter_started = true;
        }

        let ids: Vec<TreeId> = self.dirty.iter().copied().collect();
        let (base_time, fit_time) = self.estimate_trees(&ids);
        times.base_segmentation = base_time;
        times.circle_fitting = fit_time;
        times.total = start.elapsed().as_secs_f64();

        self.reports.push(FrameReport {
            frame_id: frame.id,
            input_points: frame.points.len(),
            downsampled_points: down.len(),
            clusters: clusters.len(),
            rejected_clusters: outcome.rejected_clusters,
            updated_trees: outcome.updated,
            retired_trees: outcome.retired,
            refilter_started,
            times,
        });
        Ok(self.reports.last())
    }

    /// Ends the stream: filters the latest raw grid, publishes it and
    /// re-estimates base and DBH of every tree.
    pub fn finish(&mut self) -> Result<(), PipelineError> {
        self.publish_filter()?;
        if let Some((id, _, position)) = self.last_frame {
            self.start_filter(id, &position);
            self.publish_filter()?;
        }
        let ids = self.inventory.ids();
        self.dirty.extend(ids.iter().copied());
        self.estimate_trees(&ids);
        Ok(())
    }

    fn note_outcome(&mut self, outcome: &TrackOutcome) {
        for id in &outcome.retired {
            self.dirty.remove(id);
        }
        self.dirty.extend(outcome.updated.iter().copied());
    }

    fn start_filter(&mut self, frame_id: u64, position: &Point3) {
        let Some(raw) = self.raw.as_mut() else {
            return;
        };
        let snapshot = raw.clone();
        raw.recenter(position);
        let params = self.config.filter.clone();
        let exec = self.exec;
        let job = if exec.is_parallel() {
            PendingFilter::Running(std::thread::spawn(move || filter_chain(&snapshot, &params, exec)))
        } else {
            PendingFilter::Done(filter_chain(&snapshot, &params, exec))
        };
        self.pending = Some((frame_id, Instant::now(), job));
    }

    fn publish_filter(&mut self) -> Result<(), PipelineError> {
        let Some((frame_id, started, job)) = self.pending.take() else {
            return Ok(());
        };
        let result = match job {
            PendingFilter::Running(handle) => handle.join().map_err(|_| PipelineError::FilterPanicked)?,
            PendingFilter::Done(result) => result,
        };
        self.filter_runs.push(FilterRun {
            frame_id,
            seconds: started.elapsed().as_secs_f64(),
        });
        let grid = result?;
        self.previous = self.current.replace(grid);
        let cloud = ground_points(self.current.as_ref().expect("just set"), self.previous.as_ref());
        self.ground = Some(SpatialIndex::new(&cloud));
        Ok(())
    }

    /// Segments bases, then fits DBH, for the given trees. Trees whose DBH
    /// could not be estimated stay pending. Returns the wall time of both
    /// phases.
    fn estimate_trees(&mut self, ids: &[TreeId]) -> (f64, f64) {
        let Some(ground) = &self.ground else {
            return (0.0, 0.0);
        };
        let wanted: BTreeSet<TreeId> = ids.iter().copied().collect();
        let mut trees: Vec<&mut Tree> = self
            .inventory
            .iter_mut()
            .filter(|t| wanted.contains(&t.descriptor.id))
            .collect();
        let t0 = Instant::now();
        map_mut(self.exec, &mut trees, |tree| {
            let _ = segment_base(tree, ground);
        });
        let t1 = Instant::now();
        let slice = &self.config.slice;
        let done: Vec<Option<TreeId>> = map_mut(self.exec, &mut trees, |tree| {
            let _ = tree.descriptor.base?;
            estimate_dbh(tree, slice).ok().map(|_| tree.descriptor.id)
        });
        let t2 = Instant::now();
        for id in done.into_iter().flatten() {
            self.dirty.remove(&id);
        }
        ((t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64())
    }
}

/// Points more than `clearance` above their grid cell. Points outside the
/// grid are kept.
fn above_ground(cloud: &PointCloud, grid: &ElevationGrid, clearance: f64) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let p = &cloud.points()[i];
            grid.cell_of(p.x, p.y)
                .and_then(|(c, r)| grid.get(c, r))
                .is_none_or(|h| p.z > h + clearance)
        })
        .collect();
    cloud.select(&keep)
}

/// Runs a whole frame sequence through a fresh pipeline and finishes it.
pub fn run_frames<'a>(
    config: PipelineConfig,
    exec: Execution,
    frames: impl IntoIterator<Item = &'a ScanFrame>,
) -> Result<Pipeline, PipelineError> {
    let mut pipeline = Pipeline::new(config, exec)?;
    for frame in frames {
        pipeline.process_frame(frame)?;
    }
    pipeline.finish()?;
    Ok(pipeline)
}
