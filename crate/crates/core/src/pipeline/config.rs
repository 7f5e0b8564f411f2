use std::fmt::Display;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::dbh::SliceParams;
use crate::elevation::FilterParams;
use crate::tracker::TrackerParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every tunable of the online pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub cluster_tolerance: f64,
    pub cluster_min_size: usize,
    pub cluster_max_size: usize,
    pub tracker: TrackerParams,
    pub slice: SliceParams,
    pub elevation_resolution: f64,
    pub elevation_side_length: f64,
    pub filter: FilterParams,
    /// Travel between elevation filter runs, meters.
    pub refilter_distance: f64,
    /// Points less than this far above the raw elevation grid are dropped
    /// before clustering, meters. The default of zero keeps every point, so
    /// ground returns reach the clusters and the tracker's verticality
    /// checks reject them. Around 0.3 gives cleaner clusters on flat scenes.
    pub ground_clearance: f64,
    /// Minimum travel between processed frames, meters. Zero processes
    /// every frame.
    pub scan_trigger_distance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.08,
            cluster_tolerance: 0.30,
            cluster_min_size: 40,
            cluster_max_size: usize::MAX,
            tracker: TrackerParams::default(),
            slice: SliceParams::default(),
            elevation_resolution: 0.16,
            elevation_side_length: 32.0,
            filter: FilterParams::default(),
            refilter_distance: 8.0,
            ground_clearance: 0.0,
            scan_trigger_distance: 0.0,
        }
    }
}

/// Flat view of the configuration, one entry per config-file key.
#[derive(Debug, Serialize)]
struct Flat<'a> {
    voxel_size: f64,
    cluster_tolerance: f64,
    cluster_min_size: usize,
    cluster_max_size: Option<usize>,
    theta_threshold_deg: f64,
    h_threshold: f64,
    match_distance: f64,
    trim_schedule: &'a [f64],
    central_height_fraction: f64,
    breast_height: f64,
    slice_thickness: f64,
    ransac_iterations: usize,
    inlier_tolerance: f64,
    min_inlier_ratio: f64,
    ransac_seed: u64,
    elevation_resolution: f64,
    elevation_side_length: f64,
    max_slope: f64,
    closing_kernel: usize,
    closing_passes: usize,
    refilter_distance: f64,
    ground_clearance: f64,
    scan_trigger_distance: f64,
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

impl PipelineConfig {
    /// Parses a flat `key = value` file. Blank lines and `#` comments are
    /// ignored; unset keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.into() });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "voxel_size" => self.voxel_size = parse(line, key, value)?,
            "cluster_tolerance" => self.cluster_tolerance = parse(line, key, value)?,
            "cluster_min_size" => self.cluster_min_size = parse(line, key, value)?,
            "cluster_max_size" => {
                self.cluster_max_size = if value == "none" {
                    usize::MAX
                } else {
                    parse(line, key, value)?
                }
            }
            "theta_threshold_deg" => self.tracker.theta_threshold = parse::<f64>(line, key, value)?.to_radians(),
            "h_threshold" => self.tracker.h_threshold = parse(line, key, value)?,
            "match_distance" => self.tracker.match_distance = parse(line, key, value)?,
            "trim_schedule" => {
                self.tracker.trim_schedule = value
                    .split(',')
                    .map(|v| parse(line, key, v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "central_height_fraction" => self.tracker.central_height_fraction = parse(line, key, value)?,
            "breast_height" => self.slice.breast_height = parse(line, key, value)?,
            "slice_thickness" => self.slice.slice_thickness = parse(line, key, value)?,
            "ransac_iterations" => self.slice.ransac_iterations = parse(line, key, value)?,
            "inlier_tolerance" => self.slice.inlier_tolerance = parse(line, key, value)?,
            "min_inlier_ratio" => self.slice.min_inlier_ratio = parse(line, key, value)?,
            "ransac_seed" => self.slice.seed = parse(line, key, value)?,
            "elevation_resolution" => self.elevation_resolution = parse(line, key, value)?,
            "elevation_side_length" => self.elevation_side_length = parse(line, key, value)?,
            "max_slope" => self.filter.max_slope = parse(line, key, value)?,
            "closing_kernel" => self.filter.kernel = parse(line, key, value)?,
            "closing_passes" => self.filter.closing_passes = parse(line, key, value)?,
            "refilter_distance" => self.refilter_distance = parse(line, key, value)?,
            "ground_clearance" => self.ground_clearance = parse(line, key, value)?,
            "scan_trigger_distance" => self.scan_trigger_distance = parse(line, key, value)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    /// Renders the configuration in the format read by [`Self::from_kv`].
    pub fn to_kv(&self) -> String {
        let flat = Flat {
            voxel_size: self.voxel_size,
            cluster_tolerance: self.cluster_tolerance,
            cluster_min_size: self.cluster_min_size,
            cluster_max_size: (self.cluster_max_size != usize::MAX).then_some(self.cluster_max_size),
            theta_threshold_deg: self.tracker.theta_threshold.to_degrees(),
            h_threshold: self.tracker.h_threshold,
            match_distance: self.tracker.match_distance,
            trim_schedule: &self.tracker.trim_schedule,
            central_height_fraction: self.tracker.central_height_fraction,
            breast_height: self.slice.breast_height,
            slice_thickness: self.slice.slice_thickness,
            ransac_iterations: self.slice.ransac_iterations,
            inlier_tolerance: self.slice.inlier_tolerance,
            min_inlier_ratio: self.slice.min_inlier_ratio,
            ransac_seed: self.slice.seed,
            elevation_resolution: self.elevation_resolution,
            elevation_side_length: self.elevation_side_length,
            max_slope: self.filter.max_slope,
            closing_kernel: self.filter.kernel,
            closing_passes: self.filter.closing_passes,
            refilter_distance: self.refilter_distance,
            ground_clearance: self.ground_clearance,
            scan_trigger_distance: self.scan_trigger_distance,
        };
        let value = serde_json::to_value(&flat).expect("flat config serializes");
        let mut out = String::new();
        for (k, v) in value.as_object().expect("struct") {
            let rendered = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {rendered}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("cluster_tolerance", self.cluster_tolerance),
            ("elevation_resolution", self.elevation_resolution),
            ("elevation_side_length", self.elevation_side_length),
            ("max_slope", self.filter.max_slope),
            ("refilter_distance", self.refilter_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("scan_trigger_distance", self.scan_trigger_distance),
            ("ground_clearance", self.ground_clearance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.cluster_min_size == 0 || self.cluster_min_size > self.cluster_max_size {
            return Err(ConfigError::Invalid(format!(
                "cluster sizes need 0 < min <= max, got {} and {}",
                self.cluster_min_size, self.cluster_max_size
            )));
        }
        if self.filter.kernel < 3 || self.filter.kernel.is_multiple_of(2) {
            return Err(ConfigError::Invalid(format!(
                "closing_kernel must be odd and >= 3, got {}",
                self.filter.kernel
            )));
        }
        self.tracker.validate().map_err(ConfigError::Invalid)?;
        self.slice.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}
