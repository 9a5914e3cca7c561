//! Trajectory, event and summary files.
//!
//! The trajectory is a CSV table with one row per recorded step and the
//! columns `t`, the object pose (quaternion wxyz, position), per finger the
//! anchor pose, fingertip pose, contact point, normal force and tangential
//! force magnitude, then the equilibrium residual and `sigma_min`. Numbers are
//! written as `{:.16e}`, so a round trip through [`read_trajectory`] is exact.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lie::Transform;
use crate::sim::{StepRecord, TrajectoryRecord};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Columns per finger: anchor pose, fingertip pose, contact point, two forces.
pub const FINGER_COLUMNS: usize = 19;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
}

/// Number of trajectory columns for `n` fingers.
pub fn column_count(n: usize) -> usize {
    1 + 7 + FINGER_COLUMNS * n + 2
}

fn pose_columns(prefix: &str) -> impl Iterator<Item = String> + '_ {
    ["qw", "qx", "qy", "qz", "x", "y", "z"].into_iter().map(move |c| format!("{prefix}_{c}"))
}

pub fn trajectory_header(finger_names: &[String]) -> Vec<String> {
    let mut h = vec!["t".to_owned()];
    h.extend(pose_columns("object"));
    for name in finger_names {
        h.extend(pose_columns(&format!("{name}_anchor")));
        h.extend(pose_columns(&format!("{name}_tip")));
        h.extend(["x", "y", "z"].iter().map(|c| format!("{name}_contact_{c}")));
        h.push(format!("{name}_normal"));
        h.push(format!("{name}_tangential"));
    }
    h.push("residual".to_owned());
    h.push("sigma_min".to_owned());
    h
}

fn push_pose(row: &mut Vec<f64>, t: &Transform) {
    row.extend(t.rotation().to_quaternion());
    row.extend(t.translation().iter());
}

pub fn trajectory_row(step: &StepRecord) -> Vec<f64> {
    let mut row = vec![step.time];
    push_pose(&mut row, &step.object_pose);
    for i in 0..step.anchors.len() {
        push_pose(&mut row, &step.anchors[i]);
        push_pose(&mut row, &step.tips[i]);
        row.extend(step.contact_points[i].iter());
        row.push(step.normal_forces[i]);
        row.push(step.tangential_forces[i]);
    }
    row.push(step.equilibrium_residual);
    row.push(step.sigma_min);
    row
}

pub fn write_trajectory<W: Write>(record: &TrajectoryRecord, out: W) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(&record.finger_names))?;
    for step in &record.steps {
        w.write_record(trajectory_row(step).iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// A trajectory table read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn fingers(&self) -> usize {
        (self.header.len() - column_count(0)) / FINGER_COLUMNS
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Reads a trajectory table, checking the column layout, that every field
/// is a number and that time never decreases.
pub fn read_trajectory<R: Read>(input: R) -> Result<TrajectoryTable, ExportError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let width = header.len();
    if width < column_count(0) || (width - column_count(0)) % FINGER_COLUMNS != 0 {
        return Err(ExportError::Format {
            line: 1,
            message: format!("{width} columns do not match 10 + 19n"),
        });
    }
    let n = (width - column_count(0)) / FINGER_COLUMNS;
    let names: Vec<String> = (0..n)
        .map(|i| header[8 + FINGER_COLUMNS * i].strip_suffix("_anchor_qw").map(str::to_owned))
        .collect::<Option<_>>()
        .ok_or_else(|| ExportError::Format {
            line: 1,
            message: "finger columns must start with <name>_anchor_qw".to_owned(),
        })?;
    if header != trajectory_header(&names) {
        return Err(ExportError::Format {
            line: 1,
            message: "unexpected column names".to_owned(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ExportError::Format { line, message: e.to_string() })?;
        if row.len() != width {
            return Err(ExportError::Format {
                line,
                message: format!("expected {width} fields, found {}", row.len()),
            });
        }
        if rows.last().is_some_and(|prev| !(row[0] >= prev[0])) {
            return Err(ExportError::Format {
                line,
                message: "time is not monotone".to_owned(),
            });
        }
        rows.push(row);
    }
    Ok(TrajectoryTable { header, rows })
}

/// Paths of the files written for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputFiles {
    pub trajectory: PathBuf,
    pub events: PathBuf,
    pub summary: PathBuf,
}

/// Writes the trajectory, events and summary of `record` into `dir`,
/// creating it if needed.
pub fn write_outputs(record: &TrajectoryRecord, dir: &Path) -> Result<OutputFiles, ExportError> {
    fs::create_dir_all(dir)?;
    let files = OutputFiles {
        trajectory: dir.join(TRAJECTORY_FILE),
        events: dir.join(EVENTS_FILE),
        summary: dir.join(SUMMARY_FILE),
    };
    write_trajectory(record, std::io::BufWriter::new(fs::File::create(&files.trajectory)?))?;
    fs::write(&files.events, serde_json::to_string_pretty(&record.events)? + "\n")?;
    fs::write(&files.summary, serde_json::to_string_pretty(&record.summary)? + "\n")?;
    Ok(files)
}
