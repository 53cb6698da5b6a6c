//! Body-machine-interface mapping: hand posture (20 joint angles) to a 2-D cursor.
//!
//! The map is calibrated by PCA over recorded postures. Rows of `C` are the first and
//! third principal directions of the centred calibration data, each scaled so that one
//! grid square of the 5×5 task window spans one standard deviation of the calibration
//! data projected on that direction. The mean posture sits at the window centre.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pca::Pca;

pub const FINGERS: usize = 5;
pub const JOINTS_PER_FINGER: usize = 4;
pub const NUM_JOINTS: usize = FINGERS * JOINTS_PER_FINGER;

/// Side length of the square task window, in grid units.
pub const WINDOW_SIZE: f64 = 5.0;
pub const WINDOW_CENTER: [f64; 2] = [2.5, 2.5];

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BomiError {
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("calibration needs at least {min} postures, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("hand pose must have {NUM_JOINTS} finite joint angles")]
    InvalidPose,
    #[error("slope is undefined for identical targets ({0})")]
    InvalidPair(TargetId),
    #[error("unknown target id {0}")]
    UnknownTarget(u8),
    #[error("calibration table line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, BomiError>;

/// Joint angles in radians, ordered finger-major (thumb → pinky), four joints each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose(pub [f64; NUM_JOINTS]);

impl HandPose {
    pub fn new(joints: [f64; NUM_JOINTS]) -> Result<Self> {
        if joints.iter().all(|j| j.is_finite()) {
            Ok(HandPose(joints))
        } else {
            Err(BomiError::InvalidPose)
        }
    }

    pub fn from_slice(joints: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_JOINTS] = joints.try_into().map_err(|_| BomiError::InvalidPose)?;
        Self::new(arr)
    }

    pub fn zeros() -> Self {
        HandPose([0.0; NUM_JOINTS])
    }

    /// Angle of joint `joint` (0-based) on finger `finger` (0 = thumb).
    pub fn joint(&self, finger: usize, joint: usize) -> f64 {
        self.0[finger * JOINTS_PER_FINGER + joint]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Postures recorded during calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    poses: Vec<HandPose>,
}

impl CalibrationSet {
    pub const MIN_SAMPLES: usize = NUM_JOINTS + 1;

    pub fn new(poses: Vec<HandPose>) -> Result<Self> {
        if poses.len() < Self::MIN_SAMPLES {
            return Err(BomiError::TooFewSamples { min: Self::MIN_SAMPLES, got: poses.len() });
        }
        Ok(CalibrationSet { poses })
    }

    /// Reads a comma-separated table with one posture per row and 20 radian columns.
    /// Blank lines and lines starting with `#` are ignored; a non-numeric first row is
    /// treated as a header.
    pub fn from_delimited<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut poses = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| BomiError::Parse { line, msg: e.to_string() })?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if i == 0 && poses.is_empty() => continue,
                Err(e) => return Err(BomiError::Parse { line, msg: e.to_string() }),
            };
            if values.len() != NUM_JOINTS {
                return Err(BomiError::Parse {
                    line,
                    msg: format!("expected {NUM_JOINTS} columns, found {}", values.len()),
                });
            }
            poses.push(
                HandPose::from_slice(&values)
                    .map_err(|e| BomiError::Parse { line, msg: e.to_string() })?,
            );
        }
        Self::new(poses)
    }

    pub fn poses(&self) -> &[HandPose] {
        &self.poses
    }
}

/// Target identifier, 1-based as in the experiment protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetId(pub u8);

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: TargetId,
    pub position: [f64; 2],
}

/// The four capture targets of the training phase.
pub const TARGETS: [Target; 4] = [
    Target { id: TargetId(1), position: [0.5, 4.5] },
    Target { id: TargetId(2), position: [2.5, 2.5] },
    Target { id: TargetId(3), position: [2.5, 0.5] },
    Target { id: TargetId(4), position: [4.5, 4.5] },
];

impl Target {
    pub fn by_id(id: TargetId) -> Result<Target> {
        TARGETS.iter().copied().find(|t| t.id == id).ok_or(BomiError::UnknownTarget(id.0))
    }

    /// Lower-left and upper-right corners of the grid square containing the target.
    pub fn cell(&self) -> ([f64; 2], [f64; 2]) {
        let lo = [self.position[0].floor(), self.position[1].floor()];
        (lo, [lo[0] + 1.0, lo[1] + 1.0])
    }

    pub fn cell_contains(&self, p: [f64; 2]) -> bool {
        let (lo, hi) = self.cell();
        p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
    }
}

/// Directed slope of the movement from `prev` to `cur`.
pub fn slope_angle(prev: &Target, cur: &Target) -> Result<f64> {
    if prev.id == cur.id {
        return Err(BomiError::InvalidPair(cur.id));
    }
    Ok(slope_between(prev.position, cur.position))
}

pub fn slope_between(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

/// Slope input for a trial. The first trial of a block has no previous target; the
/// window centre stands in for it.
pub fn trial_slope(prev: Option<&Target>, cur: &Target) -> Result<f64> {
    match prev {
        Some(p) => slope_angle(p, cur),
        None => Ok(slope_between(WINDOW_CENTER, cur.position)),
    }
}

/// Calibrated linear posture → cursor map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BomiMap {
    /// Mapping matrix in task units per radian. Rows are mutually orthogonal.
    pub c: [[f64; NUM_JOINTS]; 2],
    /// Mean calibration posture; maps to the window centre.
    pub center: HandPose,
    /// Task units per raw projection unit, per axis (1 / projected SD).
    pub unit: [f64; 2],
    pub window_size: f64,
}

pub fn calibrate(cal: &CalibrationSet) -> Result<BomiMap> {
    let rows: Vec<Vec<f64>> = cal.poses().iter().map(|p| p.0.to_vec()).collect();
    let pca = Pca::fit(&rows);
    let top = pca.variances[0];
    let nonzero = pca.variances.iter().filter(|&&v| v > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE)).count();
    if !(top > 0.0) || nonzero < 3 {
        return Err(BomiError::CalibrationFailed(format!(
            "calibration covariance has {nonzero} nonzero principal variances, need at least 3"
        )));
    }

    let mut c = [[0.0; NUM_JOINTS]; 2];
    let mut unit = [0.0; 2];
    for (row, &k) in [0usize, 2].iter().enumerate() {
        let mut dir: Vec<f64> = pca.components.column(k).iter().copied().collect();
        // Orient so the largest-magnitude coefficient is positive.
        let pivot = dir
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        let s = 1.0 / pca.variances[k].sqrt();
        unit[row] = s;
        for (dst, v) in c[row].iter_mut().zip(&dir) {
            *dst = v * s;
        }
    }
    let mut center = [0.0; NUM_JOINTS];
    center.copy_from_slice(pca.mean.as_slice());

    Ok(BomiMap { c, center: HandPose(center), unit, window_size: WINDOW_SIZE })
}

impl BomiMap {
    /// Cursor velocity for joint velocities `u`.
    pub fn forward_velocity(&self, u: &[f64; NUM_JOINTS]) -> [f64; 2] {
        [dot(&self.c[0], u), dot(&self.c[1], u)]
    }

    /// Cursor position of a posture.
    pub fn cursor_position(&self, pose: &HandPose) -> [f64; 2] {
        let mut dev = [0.0; NUM_JOINTS];
        for (d, (q, m)) in dev.iter_mut().zip(pose.0.iter().zip(&self.center.0)) {
            *d = q - m;
        }
        let v = self.forward_velocity(&dev);
        [WINDOW_CENTER[0] + v[0], WINDOW_CENTER[1] + v[1]]
    }

    /// Minimum-norm posture deviation from the centre that places the cursor at
    /// `position`, via the right pseudo-inverse `Cᵀ(CCᵀ)⁻¹`.
    pub fn posture_for(&self, position: [f64; 2]) -> HandPose {
        let t = [position[0] - WINDOW_CENTER[0], position[1] - WINDOW_CENTER[1]];
        let g00 = dot(&self.c[0], &self.c[0]);
        let g01 = dot(&self.c[0], &self.c[1]);
        let g11 = dot(&self.c[1], &self.c[1]);
        let det = g00 * g11 - g01 * g01;
        let y = [(g11 * t[0] - g01 * t[1]) / det, (g00 * t[1] - g01 * t[0]) / det];
        let mut out = self.center.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o += self.c[0][j] * y[0] + self.c[1][j] * y[1];
        }
        HandPose(out)
    }

    pub fn optimal_posture(&self, target: &Target) -> HandPose {
        self.posture_for(target.position)
    }
}

fn dot(a: &[f64; NUM_JOINTS], b: &[f64; NUM_JOINTS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
