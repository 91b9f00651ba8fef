//! Trajectory storage, CSV interchange, and scenario slicing.
//!
//! A trajectory is a synchronized leader/follower speed pair at a fixed
//! timestep. The CSV format is one header row `time_s,leader_speed_mps,
//! follower_speed_mps`, `#`-prefixed comment lines anywhere, and an optional
//! `# source_tag: <tag>` comment naming the recording. Timestamps must be
//! strictly increasing with uniform gaps (tolerance 1e-6 s).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;

/// Uniform gap tolerance for CSV timestamps, seconds.
const DT_TOLERANCE: f64 = 1e-6;

/// A synchronized leader/follower speed recording at fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    leader_speed: Vec<f64>,
    follower_speed: Vec<f64>,
    source_tag: String,
}

impl Trajectory {
    /// Both series must be equal-length, non-empty, finite, and >= 0.
    pub fn new(
        dt: f64,
        leader_speed: Vec<f64>,
        follower_speed: Vec<f64>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if leader_speed.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if leader_speed.len() != follower_speed.len() {
            return Err(Error::InvalidArgument(format!(
                "leader has {} samples, follower has {}",
                leader_speed.len(),
                follower_speed.len()
            )));
        }
        if leader_speed
            .iter()
            .chain(follower_speed.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument(
                "speeds must be finite and >= 0".into(),
            ));
        }
        Ok(Trajectory {
            dt,
            leader_speed,
            follower_speed,
            source_tag: source_tag.into(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.leader_speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader_speed.is_empty()
    }

    pub fn leader_speed(&self) -> &[f64] {
        &self.leader_speed
    }

    pub fn follower_speed(&self) -> &[f64] {
        &self.follower_speed
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }
}

/// Maneuver phase labels for trajectory windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceLabel {
    Constant,
    Deceleration,
    Acceleration,
    FullOscillation,
    Custom(String),
}

/// A labeled half-open index window [start, end) into a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSlice {
    pub start: usize,
    pub end: usize,
    pub label: SliceLabel,
}

/// Extracts the slice window as a standalone trajectory. The source tag is
/// carried over unchanged.
pub fn slice(traj: &Trajectory, s: &ScenarioSlice) -> Result<Trajectory> {
    if s.start >= s.end || s.end > traj.len() {
        return Err(Error::InvalidArgument(format!(
            "slice [{}, {}) out of range for trajectory of length {}",
            s.start,
            s.end,
            traj.len()
        )));
    }
    Trajectory::new(
        traj.dt,
        traj.leader_speed[s.start..s.end].to_vec(),
        traj.follower_speed[s.start..s.end].to_vec(),
        traj.source_tag.clone(),
    )
}

/// Regression view of a trajectory: inputs are leader speeds, outputs are
/// follower speeds.
pub fn to_dataset(traj: &Trajectory, vehicle_id: impl Into<String>) -> Result<Dataset> {
    Dataset::new(
        traj.leader_speed.clone(),
        traj.follower_speed.clone(),
        vehicle_id,
    )
}

fn parse_field(raw: &str, name: &str, row: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line: row,
        message: format!("cannot parse {name} value {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line: row,
            message: format!("{name} must be finite, got {raw:?}"),
        });
    }
    Ok(v)
}

/// Loads a trajectory from CSV. See the module header for the format.
/// The first `# source_tag:` comment, if any, becomes the source tag;
/// otherwise the tag is empty.
pub fn load_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)?;
    let mut source_tag = String::new();
    for line in text.lines() {
        if let Some(rest) = line.trim_start().strip_prefix("# source_tag:") {
            source_tag = rest.trim().to_string();
            break;
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers().map_err(|e| Error::Parse {
            line: 1,
            message: format!("cannot read header: {e}"),
        })?;
        let expected = ["time_s", "leader_speed_mps", "follower_speed_mps"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {expected:?}, got {got:?}"),
            });
        }
    }

    let mut times = Vec::new();
    let mut leader = Vec::new();
    let mut follower = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Data rows are 1-based for error messages; the header is row 0.
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line: row,
            message: format!("malformed row: {e}"),
        })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                line: row,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let t = parse_field(&record[0], "time_s", row)?;
        let lv = parse_field(&record[1], "leader_speed_mps", row)?;
        let fv = parse_field(&record[2], "follower_speed_mps", row)?;
        if lv < 0.0 || fv < 0.0 {
            return Err(Error::Validation {
                row,
                message: format!("negative speed ({lv}, {fv})"),
            });
        }
        times.push(t);
        leader.push(lv);
        follower.push(fv);
    }
    if times.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    if times.len() < 2 {
        return Err(Error::Validation {
            row: 1,
            message: "need at least 2 rows to establish the timestep".into(),
        });
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Validation {
            row: 2,
            message: format!("timestamps must be strictly increasing, gap {dt}"),
        });
    }
    for (i, w) in times.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if (gap - dt).abs() > DT_TOLERANCE {
            return Err(Error::Validation {
                row: i + 2,
                message: format!("non-uniform timestep: gap {gap} differs from {dt}"),
            });
        }
    }
    Trajectory::new(dt, leader, follower, source_tag)
}

/// Writes a trajectory as CSV (comment tag line, header, then rows with
/// time = i * dt). Floats use the shortest representation that round-trips,
/// so load(save(t)) reproduces t exactly.
pub fn save_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    if !traj.source_tag.is_empty() {
        out.push_str(&format!("# source_tag: {}\n", traj.source_tag));
    }
    out.push_str("time_s,leader_speed_mps,follower_speed_mps\n");
    for i in 0..traj.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            i as f64 * traj.dt,
            traj.leader_speed[i],
            traj.follower_speed[i]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
