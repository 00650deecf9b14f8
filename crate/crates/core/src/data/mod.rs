//! Dataset model shared by every stage: joint trajectories, prediction
//! windows, sample records, and their on-disk encodings.

pub mod binary;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quality::{QualityReport, Verdict};

pub use binary::FormatError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("window [{start}, {start}+{len}) out of range for {frames} frames")]
    OutOfRange { start: usize, len: usize, frames: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid trajectory: {}", join_violations(.0))]
    InvalidTrajectory(Vec<Violation>),
    #[error("record {id}: missing file {file}")]
    MissingFile { id: String, file: String },
    #[error("record {id}: checksum mismatch for {file} (manifest {expected}, actual {actual})")]
    ChecksumMismatch {
        id: String,
        file: String,
        expected: String,
        actual: String,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Provenance of a demonstration episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Generated,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Generated => "generated",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive angle bounds for one joint, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimit {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, angle: f64) -> bool {
        self.lower <= angle && angle <= self.upper
    }
}

/// Dense row-major matrix of joint angles (rows are frames).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(DataError::ShapeMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DataError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A single invariant violation found by [`validate_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoFrames,
    NoJoints,
    NonPositiveDt(f64),
    InvertedLimit { joint: usize, lower: f64, upper: f64 },
    NonFiniteLimit { joint: usize },
    NonFiniteAngle { frame: usize, joint: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "frames must be >= 1"),
            Violation::NoJoints => write!(f, "joints must be >= 1"),
            Violation::NonPositiveDt(dt) => write!(f, "dt must be > 0 (got {dt})"),
            Violation::InvertedLimit { joint, lower, upper } => {
                write!(f, "joint {joint}: lower limit {lower} must be < upper limit {upper}")
            }
            Violation::NonFiniteLimit { joint } => write!(f, "joint {joint}: non-finite limit"),
            Violation::NonFiniteAngle { frame, joint } => {
                write!(f, "non-finite angle at ({frame},{joint})")
            }
        }
    }
}

/// Time-indexed joint angles (degrees) sampled every `dt` seconds.
///
/// Construction only checks that the buffers have consistent sizes; the
/// numeric invariants are reported by [`validate_trajectory`] so that broken
/// inputs can still be inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    angles: Matrix,
    dt: f64,
    limits: Vec<JointLimit>,
}

impl JointTrajectory {
    pub fn new(angles: Matrix, dt: f64, limits: Vec<JointLimit>) -> Result<Self, DataError> {
        if limits.len() != angles.cols() {
            return Err(DataError::ShapeMismatch(format!(
                "{} limits for {} joints",
                limits.len(),
                angles.cols()
            )));
        }
        Ok(Self { angles, dt, limits })
    }

    /// Builds a trajectory and rejects it unless every invariant holds.
    pub fn validated(angles: Matrix, dt: f64, limits: Vec<JointLimit>) -> Result<Self, DataError> {
        let traj = Self::new(angles, dt, limits)?;
        let violations = validate_trajectory(&traj);
        if violations.is_empty() {
            Ok(traj)
        } else {
            Err(DataError::InvalidTrajectory(violations))
        }
    }

    pub fn frames(&self) -> usize {
        self.angles.rows()
    }

    pub fn joints(&self) -> usize {
        self.angles.cols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    pub fn angles(&self) -> &Matrix {
        &self.angles
    }

    pub fn angle(&self, frame: usize, joint: usize) -> f64 {
        self.angles.get(frame, joint)
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        self.angles.row(frame)
    }

    fn check_range(&self, start: usize, len: usize) -> Result<(), DataError> {
        match start.checked_add(len) {
            Some(end) if end <= self.frames() => Ok(()),
            _ => Err(DataError::OutOfRange {
                start,
                len,
                frames: self.frames(),
            }),
        }
    }

    /// Contiguous frames `[start, start + len)` as a new trajectory sharing
    /// `dt` and limits.
    pub fn slice(&self, start: usize, len: usize) -> Result<JointTrajectory, DataError> {
        Ok(JointTrajectory {
            angles: window(self, start, len)?,
            dt: self.dt,
            limits: self.limits.clone(),
        })
    }
}

/// Lists every violated trajectory invariant; empty means valid.
pub fn validate_trajectory(traj: &JointTrajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if traj.frames() == 0 {
        out.push(Violation::NoFrames);
    }
    if traj.joints() == 0 {
        out.push(Violation::NoJoints);
    }
    if !traj.dt.is_finite() || traj.dt <= 0.0 {
        out.push(Violation::NonPositiveDt(traj.dt));
    }
    for (j, lim) in traj.limits.iter().enumerate() {
        if !lim.lower.is_finite() || !lim.upper.is_finite() {
            out.push(Violation::NonFiniteLimit { joint: j });
        } else if lim.lower >= lim.upper {
            out.push(Violation::InvertedLimit {
                joint: j,
                lower: lim.lower,
                upper: lim.upper,
            });
        }
    }
    for frame in 0..traj.frames() {
        for (joint, v) in traj.frame(frame).iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFiniteAngle { frame, joint });
            }
        }
    }
    out
}

/// Rows `[start, start + len)` of the trajectory. Callers asking for a tail
/// window pass `len = min(L, frames - start)`.
pub fn window(traj: &JointTrajectory, start: usize, len: usize) -> Result<Matrix, DataError> {
    traj.check_range(start, len)?;
    let cols = traj.joints();
    let data = traj.angles.as_slice()[start * cols..(start + len) * cols].to_vec();
    Matrix::new(len, cols, data)
}

/// Policy prediction for one action chunk next to its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunkPair {
    pub predicted: Matrix,
    pub reference: Matrix,
    pub window_start: usize,
}

impl ActionChunkPair {
    pub fn new(predicted: Matrix, reference: Matrix, window_start: usize) -> Result<Self, DataError> {
        if predicted.rows() != reference.rows() || predicted.cols() != reference.cols() {
            return Err(DataError::ShapeMismatch(format!(
                "predicted {}x{} vs reference {}x{}",
                predicted.rows(),
                predicted.cols(),
                reference.rows(),
                reference.cols()
            )));
        }
        if predicted.rows() == 0 {
            return Err(DataError::ShapeMismatch("empty action chunk".into()));
        }
        Ok(Self {
            predicted,
            reference,
            window_start,
        })
    }

    pub fn window_len(&self) -> usize {
        self.predicted.rows()
    }

    /// Checks the chunk fits inside a trajectory of `frames` frames with
    /// `joints` joints.
    pub fn check_against(&self, frames: usize, joints: usize) -> Result<(), DataError> {
        if self.predicted.cols() != joints {
            return Err(DataError::ShapeMismatch(format!(
                "chunk has {} joints, trajectory has {joints}",
                self.predicted.cols()
            )));
        }
        match self.window_start.checked_add(self.window_len()) {
            Some(end) if end <= frames => Ok(()),
            _ => Err(DataError::OutOfRange {
                start: self.window_start,
                len: self.window_len(),
                frames,
            }),
        }
    }
}

/// One demonstration episode with everything the pipeline learns about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub source: Source,
    pub task: String,
    pub trajectory: JointTrajectory,
    pub prediction_windows: Vec<ActionChunkPair>,
    pub quality: Option<QualityReport>,
    /// Unified performance score in `[0, 1]`; higher is better.
    pub score: Option<f64>,
    /// Sampling probability; `Some(0.0)` marks a sample removed from training.
    pub weight: Option<f64>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, source: Source, task: impl Into<String>, trajectory: JointTrajectory) -> Self {
        Self {
            id: id.into(),
            source,
            task: task.into(),
            trajectory,
            prediction_windows: Vec::new(),
            quality: None,
            score: None,
            weight: None,
        }
    }

    /// Real samples always pass; generated samples carry the filter verdict.
    pub fn verdict(&self) -> Option<Verdict> {
        match self.source {
            Source::Real => Some(Verdict::Pass),
            Source::Generated => self.quality.as_ref().and_then(|q| q.verdict.clone()),
        }
    }

    /// A sample is retained unless it was filtered or its weight zeroed.
    pub fn is_retained(&self) -> bool {
        let failed = matches!(self.verdict(), Some(Verdict::Fail(_)));
        !failed && self.weight != Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, joints: usize) -> JointTrajectory {
        let data = (0..frames * joints).map(|v| v as f64).collect();
        JointTrajectory::new(
            Matrix::new(frames, joints, data).unwrap(),
            0.033,
            vec![JointLimit::new(-1e6, 1e6); joints],
        )
        .unwrap()
    }

    #[test]
    fn sane_trajectory_validates() {
        assert!(validate_trajectory(&ramp(10, 7)).is_empty());
    }

    #[test]
    fn zero_dt_is_reported() {
        let t = ramp(10, 7);
        let bad = JointTrajectory::new(t.angles.clone(), 0.0, t.limits.clone()).unwrap();
        let v = validate_trajectory(&bad);
        assert_eq!(v, vec![Violation::NonPositiveDt(0.0)]);
        assert!(v[0].to_string().contains("dt must be > 0"));
    }

    #[test]
    fn non_finite_angle_reports_coordinates() {
        let mut data: Vec<f64> = vec![0.0; 10 * 7];
        data[3 * 7 + 2] = f64::NAN;
        let t = JointTrajectory::new(
            Matrix::new(10, 7, data).unwrap(),
            0.033,
            vec![JointLimit::new(-1.0, 1.0); 7],
        )
        .unwrap();
        assert_eq!(
            validate_trajectory(&t),
            vec![Violation::NonFiniteAngle { frame: 3, joint: 2 }]
        );
    }

    #[test]
    fn inverted_limits_are_reported() {
        let t = JointTrajectory::new(
            Matrix::new(2, 2, vec![0.0; 4]).unwrap(),
            0.1,
            vec![JointLimit::new(-1.0, 1.0), JointLimit::new(2.0, 2.0)],
        )
        .unwrap();
        assert_eq!(
            validate_trajectory(&t),
            vec![Violation::InvertedLimit {
                joint: 1,
                lower: 2.0,
                upper: 2.0
            }]
        );
        assert!(JointTrajectory::validated(t.angles.clone(), 0.1, t.limits.clone()).is_err());
    }

    #[test]
    fn windows() {
        let t = ramp(100, 3);
        let w = window(&t, 0, 50).unwrap();
        assert_eq!(w.rows(), 50);
        assert_eq!(w.row(0), t.frame(0));
        let tail = window(&t, 98, 2).unwrap();
        assert_eq!(tail.rows(), 2);
        assert_eq!(tail.row(1), t.frame(99));
        assert!(matches!(
            window(&t, 99, 5),
            Err(DataError::OutOfRange {
                start: 99,
                len: 5,
                frames: 100
            })
        ));
        assert!(matches!(window(&t, usize::MAX, 2), Err(DataError::OutOfRange { .. })));
    }

    #[test]
    fn chunk_pair_shape_checks() {
        let a = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        let b = Matrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(ActionChunkPair::new(a.clone(), b, 0).is_err());
        let p = ActionChunkPair::new(a.clone(), a, 8).unwrap();
        assert!(p.check_against(10, 3).is_ok());
        assert!(p.check_against(9, 3).is_err());
        assert!(p.check_against(10, 4).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adjacent_windows_concatenate(
                (frames, a, n, m) in (1usize..40).prop_flat_map(|f| (Just(f), 0..=f))
                    .prop_flat_map(|(f, a)| (Just(f), Just(a), 0..=f - a))
                    .prop_flat_map(|(f, a, n)| (Just(f), Just(a), Just(n), 0..=f - a - n)),
                joints in 1usize..5,
            ) {
                let t = ramp(frames, joints);
                let left = window(&t, a, n).unwrap();
                let right = window(&t, a + n, m).unwrap();
                let whole = window(&t, a, n + m).unwrap();
                let mut joined = left.as_slice().to_vec();
                joined.extend_from_slice(right.as_slice());
                prop_assert_eq!(joined.as_slice(), whole.as_slice());
            }
        }
    }
}
