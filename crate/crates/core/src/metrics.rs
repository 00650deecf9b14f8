//! Per-sample performance scores and execution-quality statistics.
//!
//! Three raw channels are computed for every sample: the (negated) action
//! prediction error, the (negated) summed second-difference magnitude of the
//! joint angles, and a binary within-limits indicator. Each channel is min-max
//! normalized across the cohort and the three are averaged into a single
//! score where higher means the policy handles the sample better.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ActionChunkPair, DataError, JointTrajectory};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("window of {0} frames is too short; at least 3 are required")]
    WindowTooShort(usize),
    #[error("window [{start}, {start}+{len}) out of range for {frames} frames")]
    OutOfRange { start: usize, len: usize, frames: usize },
    #[error("trajectory has {0} frames; at least 3 are required")]
    TooFewFrames(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("no prediction windows")]
    NoPredictions,
}

impl From<DataError> for MetricError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::OutOfRange { start, len, frames } => MetricError::OutOfRange { start, len, frames },
            other => MetricError::ShapeMismatch(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScores {
    /// Negated mean squared action error, `<= 0`.
    pub mse: f64,
    /// Negated summed second-difference magnitude, `<= 0`.
    pub smooth: f64,
    /// 1 when every angle respects its limits, else 0.
    pub limit: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub mse_n: f64,
    pub smooth_n: f64,
    pub limit_n: f64,
    pub fused: f64,
}

impl NormalizedScores {
    pub fn new(mse_n: f64, smooth_n: f64, limit_n: f64) -> Self {
        Self {
            mse_n,
            smooth_n,
            limit_n,
            fused: (mse_n + smooth_n + limit_n) / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionReport {
    pub duration: f64,
    /// Mean absolute angular acceleration in deg/s²; `None` below 3 frames.
    pub mean_ang_accel: Option<f64>,
    pub overlimit_frames: usize,
}

/// Which part of the trajectory the smoothness and limit channels cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothScope {
    /// The whole episode.
    #[default]
    Episode,
    /// Only the frames covered by prediction windows (averaged over windows).
    Window,
}

/// `-(1/len) Σ_t ||predicted_t - reference_t||²`.
pub fn action_mse_score(pair: &ActionChunkPair) -> Result<f64, MetricError> {
    let (p, r) = (&pair.predicted, &pair.reference);
    if p.rows() != r.rows() || p.cols() != r.cols() {
        return Err(MetricError::ShapeMismatch(format!(
            "predicted {}x{} vs reference {}x{}",
            p.rows(),
            p.cols(),
            r.rows(),
            r.cols()
        )));
    }
    if p.rows() == 0 {
        return Err(MetricError::ShapeMismatch("empty window".into()));
    }
    let total: f64 = p
        .as_slice()
        .iter()
        .zip(r.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(-(total / p.rows() as f64) + 0.0)
}

/// Same as [`action_mse_score`] but only over the first `max_len` rows.
pub fn action_mse_score_capped(pair: &ActionChunkPair, max_len: usize) -> Result<f64, MetricError> {
    if pair.window_len() <= max_len {
        return action_mse_score(pair);
    }
    let take = |m: &crate::data::Matrix| {
        crate::data::Matrix::new(max_len, m.cols(), m.as_slice()[..max_len * m.cols()].to_vec())
    };
    let capped = ActionChunkPair::new(take(&pair.predicted)?, take(&pair.reference)?, pair.window_start)?;
    action_mse_score(&capped)
}

/// Sum of `|a[k+2] - 2a[k+1] + a[k]| / dt²` over every frame triple and joint
/// in `[start, start+len)`, together with the number of terms summed.
///
/// Shared by the smoothness channel and the execution report.
fn second_difference_sum(traj: &JointTrajectory, start: usize, len: usize) -> (f64, usize) {
    let dt2 = traj.dt() * traj.dt();
    let mut sum = 0.0;
    let mut terms = 0;
    for k in start..start + len - 2 {
        let (a0, a1, a2) = (traj.frame(k), traj.frame(k + 1), traj.frame(k + 2));
        for j in 0..traj.joints() {
            sum += ((a2[j] - 2.0 * a1[j] + a0[j]) / dt2).abs();
            terms += 1;
        }
    }
    (sum, terms)
}

fn check_window(traj: &JointTrajectory, start: usize, len: usize) -> Result<(), MetricError> {
    match start.checked_add(len) {
        Some(end) if end <= traj.frames() => Ok(()),
        _ => Err(MetricError::OutOfRange {
            start,
            len,
            frames: traj.frames(),
        }),
    }
}

/// Negated total second-difference magnitude over the window.
pub fn smoothness_score(traj: &JointTrajectory, start: usize, len: usize) -> Result<f64, MetricError> {
    if len < 3 {
        return Err(MetricError::WindowTooShort(len));
    }
    check_window(traj, start, len)?;
    Ok(-second_difference_sum(traj, start, len).0 + 0.0)
}

/// 1 iff every angle in the window lies within its joint's inclusive limits.
pub fn joint_limit_score(traj: &JointTrajectory, start: usize, len: usize) -> Result<u8, MetricError> {
    check_window(traj, start, len)?;
    let ok = (start..start + len).all(|k| traj.frame(k).iter().zip(traj.limits()).all(|(&a, lim)| lim.contains(a)));
    Ok(u8::from(ok))
}

/// Maps `values` linearly onto `[0, 1]`; an all-equal list maps to 0.5.
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(MetricError::NonFiniteInput(i));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    let span = max - min;
    Ok(values.iter().map(|&v| (v - min) / span).collect())
}

/// Normalizes each channel over the whole cohort and fuses them.
pub fn unified_scores(raw: &[RawScores]) -> Result<Vec<NormalizedScores>, MetricError> {
    let mse = minmax_normalize(&raw.iter().map(|r| r.mse).collect::<Vec<_>>())?;
    let smooth = minmax_normalize(&raw.iter().map(|r| r.smooth).collect::<Vec<_>>())?;
    let limit = minmax_normalize(&raw.iter().map(|r| f64::from(r.limit)).collect::<Vec<_>>())?;
    Ok((0..raw.len())
        .map(|i| NormalizedScores::new(mse[i], smooth[i], limit[i]))
        .collect())
}

pub fn execution_report(traj: &JointTrajectory) -> ExecutionReport {
    let frames = traj.frames();
    let duration = frames.saturating_sub(1) as f64 * traj.dt();
    let mean_ang_accel = (frames >= 3).then(|| {
        let (sum, terms) = second_difference_sum(traj, 0, frames);
        sum / terms as f64
    });
    let overlimit_frames = (0..frames)
        .filter(|&k| {
            traj.frame(k)
                .iter()
                .zip(traj.limits())
                .any(|(&a, lim)| !lim.contains(a))
        })
        .count();
    ExecutionReport {
        duration,
        mean_ang_accel,
        overlimit_frames,
    }
}

/// Strict variant of [`execution_report`] for callers that need acceleration.
pub fn execution_report_strict(traj: &JointTrajectory) -> Result<ExecutionReport, MetricError> {
    if traj.frames() < 3 {
        return Err(MetricError::TooFewFrames(traj.frames()));
    }
    Ok(execution_report(traj))
}

/// Per-sample MSE channel: mean over all prediction windows, each capped at
/// `max_window` rows.
pub fn sample_mse(windows: &[ActionChunkPair], max_window: usize) -> Result<f64, MetricError> {
    if windows.is_empty() {
        return Err(MetricError::NoPredictions);
    }
    let mut total = 0.0;
    for w in windows {
        total += action_mse_score_capped(w, max_window)?;
    }
    Ok(total / windows.len() as f64 + 0.0)
}

/// Smoothness and limit channels for one sample under `scope`.
pub fn sample_kinematics(
    traj: &JointTrajectory,
    windows: &[ActionChunkPair],
    scope: SmoothScope,
    max_window: usize,
) -> Result<(f64, u8), MetricError> {
    match scope {
        SmoothScope::Episode => Ok((
            smoothness_score(traj, 0, traj.frames())?,
            joint_limit_score(traj, 0, traj.frames())?,
        )),
        SmoothScope::Window => {
            if windows.is_empty() {
                return Err(MetricError::NoPredictions);
            }
            let mut smooth = 0.0;
            let mut limit = 1u8;
            for w in windows {
                let len = w.window_len().min(max_window);
                smooth += smoothness_score(traj, w.window_start, len)?;
                limit = limit.min(joint_limit_score(traj, w.window_start, len)?);
            }
            Ok((smooth / windows.len() as f64 + 0.0, limit))
        }
    }
}

/// One line of the score file. Normalized channels are present only for
/// samples that took part in cohort normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub r_mse: Option<f64>,
    pub r_smooth: Option<f64>,
    pub r_limit: Option<u8>,
    pub normalized: Option<NormalizedScores>,
}

impl ScoreRecord {
    pub fn score(&self) -> Option<f64> {
        self.normalized.map(|n| n.fused)
    }
}

/// Nine significant digits, scientific notation, valid JSON.
pub fn format_sig9(v: f64) -> String {
    format!("{:.8e}", v + 0.0)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), format_sig9)
}

pub fn format_score_line(r: &ScoreRecord) -> String {
    let mut s = String::new();
    let n = r.normalized;
    write!(
        s,
        "{{\"id\":{},\"r_mse\":{},\"r_smooth\":{},\"r_limit\":{},\"mse_n\":{},\"smooth_n\":{},\"limit_n\":{},\"s\":{}}}",
        serde_json::to_string(&r.id).expect("string serializes"),
        opt_num(r.r_mse),
        opt_num(r.r_smooth),
        r.r_limit.map_or_else(|| "null".to_string(), |v| v.to_string()),
        opt_num(n.map(|n| n.mse_n)),
        opt_num(n.map(|n| n.smooth_n)),
        opt_num(n.map(|n| n.limit_n)),
        opt_num(n.map(|n| n.fused)),
    )
    .expect("writing to a String cannot fail");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    id: String,
    r_mse: Option<f64>,
    r_smooth: Option<f64>,
    r_limit: Option<u8>,
    mse_n: Option<f64>,
    smooth_n: Option<f64>,
    limit_n: Option<f64>,
    s: Option<f64>,
}

pub fn parse_score_file(text: &str) -> Result<Vec<ScoreRecord>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: ScoreLine = serde_json::from_str(line).map_err(|e| DataError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let normalized = match (l.mse_n, l.smooth_n, l.limit_n, l.s) {
            (Some(a), Some(b), Some(c), Some(s)) => Some(NormalizedScores {
                mse_n: a,
                smooth_n: b,
                limit_n: c,
                fused: s,
            }),
            (None, None, None, None) => None,
            _ => {
                return Err(DataError::MalformedRecord {
                    line: idx + 1,
                    reason: "partially normalized record".into(),
                })
            }
        };
        if let Some(s) = l.s {
            if !(0.0..=1.0).contains(&s) {
                return Err(DataError::MalformedRecord {
                    line: idx + 1,
                    reason: format!("score {s} outside [0, 1]"),
                });
            }
        }
        out.push(ScoreRecord {
            id: l.id,
            r_mse: l.r_mse,
            r_smooth: l.r_smooth,
            r_limit: l.r_limit,
            normalized,
        });
    }
    Ok(out)
}
