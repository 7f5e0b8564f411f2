//! On-disk formats: scan logs, inventories, ground truth and reports.
//!
//! A scan log is a directory holding `trajectory.csv` (one pose per frame)
//! and one `frame_NNNNNN.xyz` file per frame with sensor-frame points, one
//! `x y z` triple per line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Estimate;
use crate::geometry::{Frame, GeometryError, Point3, PointCloud, Pose, Vec3};
use crate::scan::ScanFrame;
use crate::sim::GroundTruthTree;
use crate::tracker::TreeDescriptor;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRAJECTORY_HEADER: [&str; 9] = ["frame", "t", "x", "y", "z", "qw", "qx", "qy", "qz"];
pub const INVENTORY_HEADER: [&str; 11] = [
    "id",
    "base_x",
    "base_y",
    "base_z",
    "dbh_m",
    "incline_x",
    "incline_y",
    "incline_z",
    "min_z",
    "max_z",
    "n_points",
];
pub const TRUTH_HEADER: [&str; 8] = [
    "id", "base_x", "base_y", "base_z", "dbh_m", "axis_x", "axis_y", "axis_z",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing trajectory file")]
    MissingTrajectory { path: PathBuf },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: u64, reason: String },
    #[error("{path}:{line}: timestamp {got} does not follow {previous}")]
    NonMonotone {
        path: PathBuf,
        line: u64,
        previous: f64,
        got: f64,
    },
    #[error("{path}:{line}: bad pose: {source}")]
    Pose {
        path: PathBuf,
        line: u64,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn frame_file_name(id: u64) -> String {
    format!("frame_{id:06}.xyz")
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    frame: u64,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Writes frames as a scan log directory, creating it if needed. Numbers
/// are written in shortest round-trip form, so reading back is exact.
pub fn write_scan_log<'a>(dir: &Path, frames: impl IntoIterator<Item = &'a ScanFrame>) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let traj_path = dir.join(TRAJECTORY_FILE);
    let mut traj = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&traj_path)
        .map_err(csv_err(&traj_path))?;
    traj.write_record(TRAJECTORY_HEADER).map_err(csv_err(&traj_path))?;
    for frame in frames {
        let [qw, qx, qy, qz] = frame.pose.wxyz();
        let p = frame.pose.position;
        traj.serialize(TrajectoryRow {
            frame: frame.id,
            t: frame.timestamp,
            x: p.x,
            y: p.y,
            z: p.z,
            qw,
            qx,
            qy,
            qz,
        })
        .map_err(csv_err(&traj_path))?;
        let path = dir.join(frame_file_name(frame.id));
        let mut out = BufWriter::new(File::create(&path).map_err(file_err(&path))?);
        for q in frame.points.iter() {
            writeln!(out, "{} {} {}", q.x, q.y, q.z).map_err(file_err(&path))?;
        }
        out.flush().map_err(file_err(&path))?;
    }
    traj.flush().map_err(file_err(&traj_path))?;
    Ok(())
}

/// Streaming reader over a scan log. Frames are yielded in trajectory
/// order and each frame file is read only when its frame is requested.
pub struct ScanLog {
    dir: PathBuf,
    traj_path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
    previous_t: Option<f64>,
    failed: bool,
}

/// Opens a scan log directory and checks the trajectory header.
pub fn open_scan_log(dir: &Path) -> Result<ScanLog, IoError> {
    let traj_path = dir.join(TRAJECTORY_FILE);
    if !traj_path.is_file() {
        return Err(IoError::MissingTrajectory { path: traj_path });
    }
    let file = File::open(&traj_path).map_err(file_err(&traj_path))?;
    let mut records = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file)
        .into_records();
    if let Some(header) = records.next() {
        let header = header.map_err(csv_err(&traj_path))?;
        let found: Vec<&str> = header.iter().collect();
        if found != TRAJECTORY_HEADER {
            return Err(IoError::Header {
                path: traj_path,
                expected: TRAJECTORY_HEADER.join(","),
                found: found.join(","),
            });
        }
    }
    Ok(ScanLog {
        dir: dir.to_path_buf(),
        traj_path,
        records,
        previous_t: None,
        failed: false,
    })
}

impl ScanLog {
    fn parse_row(&mut self, record: csv::StringRecord) -> Result<ScanFrame, IoError> {
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| IoError::Malformed {
            path: self.traj_path.clone(),
            line,
            reason,
        };
        if record.len() != TRAJECTORY_HEADER.len() {
            return Err(malformed(format!(
                "expected {} fields, found {}",
                TRAJECTORY_HEADER.len(),
                record.len()
            )));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|e| malformed(format!("frame `{}`: {e}", &record[0])))?;
        let mut v = [0.0; 8];
        for (k, slot) in v.iter_mut().enumerate() {
            let field = &record[k + 1];
            *slot = field
                .parse()
                .map_err(|e| malformed(format!("{} `{field}`: {e}", TRAJECTORY_HEADER[k + 1])))?;
        }
        let t = v[0];
        if let Some(prev) = self.previous_t {
            if !(t > prev) {
                return Err(IoError::NonMonotone {
                    path: self.traj_path.clone(),
                    line,
                    previous: prev,
                    got: t,
                });
            }
        }
        self.previous_t = Some(t);
        let pose =
            Pose::from_wxyz(Point3::new(v[1], v[2], v[3]), v[4], v[5], v[6], v[7]).map_err(|source| IoError::Pose {
                path: self.traj_path.clone(),
                line,
                source,
            })?;
        let points = read_xyz(&self.dir.join(frame_file_name(id)))?;
        Ok(ScanFrame {
            id,
            timestamp: t,
            pose,
            points,
        })
    }
}

impl Iterator for ScanLog {
    type Item = Result<ScanFrame, IoError>;

    /// Stops after the first error.
    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = match self.records.next()? {
            Ok(record) => self.parse_row(record),
            Err(e) => Err(csv_err(&self.traj_path)(e)),
        };
        self.failed = item.is_err();
        Some(item)
    }
}

/// Reads a point file of whitespace-separated `x y z` lines.
pub fn read_xyz(path: &Path) -> Result<PointCloud, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut points = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        let lineno = i as u64 + 1;
        let malformed = |reason: String| IoError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut c = [0.0f64; 3];
        for (slot, f) in c.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| malformed(format!("`{f}`: {e}")))?;
            if !slot.is_finite() {
                return Err(malformed(format!("non-finite coordinate `{f}`")));
            }
        }
        points.push(Point3::new(c[0], c[1], c[2]));
    }
    Ok(PointCloud::from_finite(points, Frame::Sensor))
}

/// One row of `inventory.csv`. Unset base or DBH values are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRecord {
    pub id: u64,
    pub base_x: Option<f64>,
    pub base_y: Option<f64>,
    pub base_z: Option<f64>,
    pub dbh_m: Option<f64>,
    pub incline_x: f64,
    pub incline_y: f64,
    pub incline_z: f64,
    pub min_z: f64,
    pub max_z: f64,
    pub n_points: usize,
}

impl From<&TreeDescriptor> for InventoryRecord {
    fn from(d: &TreeDescriptor) -> Self {
        let dir = d.incline.direction;
        Self {
            id: d.id,
            base_x: d.base.map(|b| b.x),
            base_y: d.base.map(|b| b.y),
            base_z: d.base.map(|b| b.z),
            dbh_m: d.dbh,
            incline_x: dir.x,
            incline_y: dir.y,
            incline_z: dir.z,
            min_z: d.min_z,
            max_z: d.max_z,
            n_points: d.point_count,
        }
    }
}

impl From<&InventoryRecord> for Estimate {
    fn from(r: &InventoryRecord) -> Self {
        let base = match (r.base_x, r.base_y, r.base_z) {
            (Some(x), Some(y), Some(z)) => Some(Point3::new(x, y, z)),
            _ => None,
        };
        Self {
            id: r.id,
            base,
            dbh: r.dbh_m,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let found: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    if found != header {
        return Err(IoError::Header {
            path: path.to_path_buf(),
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut rows = Vec::new();
    for result in r.deserialize() {
        rows.push(result.map_err(|e: csv::Error| {
            let line = e.position().map_or(0, |p| p.line());
            IoError::Malformed {
                path: path.to_path_buf(),
                line,
                reason: e.to_string(),
            }
        })?);
    }
    Ok(rows)
}

pub fn write_inventory(path: &Path, descriptors: &[TreeDescriptor]) -> Result<(), IoError> {
    write_rows(path, &INVENTORY_HEADER, descriptors.iter().map(InventoryRecord::from))
}

pub fn read_inventory(path: &Path) -> Result<Vec<InventoryRecord>, IoError> {
    read_rows(path, &INVENTORY_HEADER)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    id: u64,
    base_x: f64,
    base_y: f64,
    base_z: f64,
    dbh_m: f64,
    axis_x: f64,
    axis_y: f64,
    axis_z: f64,
}

pub fn write_ground_truth(path: &Path, truth: &[GroundTruthTree]) -> Result<(), IoError> {
    write_rows(
        path,
        &TRUTH_HEADER,
        truth.iter().map(|t| TruthRow {
            id: t.id,
            base_x: t.base.x,
            base_y: t.base.y,
            base_z: t.base.z,
            dbh_m: t.dbh,
            axis_x: t.axis.x,
            axis_y: t.axis.y,
            axis_z: t.axis.z,
        }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthTree>, IoError> {
    let rows: Vec<TruthRow> = read_rows(path, &TRUTH_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|r| GroundTruthTree {
            id: r.id,
            base: Point3::new(r.base_x, r.base_y, r.base_z),
            dbh: r.dbh_m,
            axis: Vec3::new(r.axis_x, r.axis_y, r.axis_z),
        })
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(out).map_err(file_err(path))?;
    out.flush().map_err(file_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a walking path: one `x y` vertex per line, `#` starts a comment.
pub fn read_path(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let malformed = |reason: String| IoError::Malformed {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            reason,
        };
        let fields: Vec<&str> = content
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(malformed(format!("expected `x y`, found {} fields", fields.len())));
        }
        let parse = |f: &str| -> Result<f64, IoError> {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("bad coordinate `{f}`")))
        };
        out.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(out)
}
