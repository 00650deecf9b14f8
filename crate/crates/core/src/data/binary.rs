//! Little-endian sidecar formats for bulk numeric payloads.
//!
//! | magic  | layout                                                                   |
//! |--------|--------------------------------------------------------------------------|
//! | `EMTR` | u32 frames, u32 joints, f32 dt, frames×joints f32, joints×(lower, upper) f32 |
//! | `EMPR` | u32 windows, then per window u32 start, u32 len, len×joints predicted f32, len×joints reference f32 |
//! | `EMDP` | u32 frames, u32 height, u32 width, frames×height×width f32                |
//! | `EMEM` | u32 count, u32 dim, count×dim f32                                        |
//!
//! `EMPR` does not record the joint count; it is taken from the trajectory
//! the predictions belong to.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ActionChunkPair, DataError, JointLimit, JointTrajectory, Matrix};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"EMTR";
pub const PREDICTION_MAGIC: &[u8; 4] = b"EMPR";
pub const GRID_MAGIC: &[u8; 4] = b"EMDP";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMEM";

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("{0}")]
    Invalid(String),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| FormatError::Invalid("element count overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }

    fn finish(self) -> Result<(), FormatError> {
        let rest = self.buf.len() - self.pos;
        if rest == 0 {
            Ok(())
        } else {
            Err(FormatError::TrailingBytes(rest))
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn dims(a: u32, b: u32) -> Result<usize, FormatError> {
    (a as usize)
        .checked_mul(b as usize)
        .ok_or_else(|| FormatError::Invalid("dimensions overflow".into()))
}

pub fn encode_trajectory(traj: &JointTrajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * (traj.frames() + 2) * traj.joints());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    put_u32(&mut out, traj.frames());
    put_u32(&mut out, traj.joints());
    out.extend_from_slice(&(traj.dt() as f32).to_le_bytes());
    put_f32s(&mut out, traj.angles().as_slice());
    for lim in traj.limits() {
        put_f32s(&mut out, &[lim.lower, lim.upper]);
    }
    out
}

/// Decodes an `EMTR` payload. The result is structurally consistent but not
/// yet validated; see [`super::validate_trajectory`].
pub fn decode_trajectory(bytes: &[u8]) -> Result<JointTrajectory, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(TRAJECTORY_MAGIC)?;
    let frames = r.u32()?;
    let joints = r.u32()?;
    let dt = f64::from(r.f32()?);
    let angles = r.f32s(dims(frames, joints)?)?;
    let raw_limits = r.f32s(2 * joints as usize)?;
    r.finish()?;
    let limits = raw_limits
        .chunks_exact(2)
        .map(|c| JointLimit::new(c[0], c[1]))
        .collect();
    let angles =
        Matrix::new(frames as usize, joints as usize, angles).map_err(|e| FormatError::Invalid(e.to_string()))?;
    JointTrajectory::new(angles, dt, limits).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn encode_predictions(windows: &[ActionChunkPair]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PREDICTION_MAGIC);
    put_u32(&mut out, windows.len());
    for w in windows {
        put_u32(&mut out, w.window_start);
        put_u32(&mut out, w.window_len());
        put_f32s(&mut out, w.predicted.as_slice());
        put_f32s(&mut out, w.reference.as_slice());
    }
    out
}

pub fn decode_predictions(bytes: &[u8], joints: usize) -> Result<Vec<ActionChunkPair>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(PREDICTION_MAGIC)?;
    let count = r.u32()?;
    let mut windows = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let start = r.u32()? as usize;
        let len = r.u32()? as usize;
        let n = len
            .checked_mul(joints)
            .ok_or_else(|| FormatError::Invalid("window size overflows".into()))?;
        let predicted = r.f32s(n)?;
        let reference = r.f32s(n)?;
        let to_matrix = |d| Matrix::new(len, joints, d).map_err(|e| FormatError::Invalid(e.to_string()));
        let pair = ActionChunkPair::new(to_matrix(predicted)?, to_matrix(reference)?, start)
            .map_err(|e| FormatError::Invalid(e.to_string()))?;
        windows.push(pair);
    }
    r.finish()?;
    Ok(windows)
}

/// Frame-major stack of 2-D grids: depth maps or single-channel view images.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, FormatError> {
        let n = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| FormatError::Invalid("grid dimensions overflow".into()))?;
        if n != values.len() {
            return Err(FormatError::Invalid(format!(
                "{} values for a {frames}x{height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            values,
        })
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[f * n..(f + 1) * n]
    }
}

pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * grid.values.len());
    out.extend_from_slice(GRID_MAGIC);
    put_u32(&mut out, grid.frames);
    put_u32(&mut out, grid.height);
    put_u32(&mut out, grid.width);
    put_f32s(&mut out, &grid.values);
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(GRID_MAGIC)?;
    let frames = r.u32()?;
    let height = r.u32()?;
    let width = r.u32()?;
    let n = dims(frames, height)?
        .checked_mul(width as usize)
        .ok_or_else(|| FormatError::Invalid("grid dimensions overflow".into()))?;
    let values = r.f32s(n)?;
    r.finish()?;
    Grid::new(frames as usize, height as usize, width as usize, values)
}

/// Fixed-dimension embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

pub fn encode_embeddings(e: &Embeddings) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, e.vectors.len());
    put_u32(&mut out, e.dim);
    for v in &e.vectors {
        assert_eq!(v.len(), e.dim, "embedding dimension mismatch");
        put_f32s(&mut out, v);
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Embeddings, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let flat = r.f32s(
        count
            .checked_mul(dim)
            .ok_or_else(|| FormatError::Invalid("embedding size overflows".into()))?,
    )?;
    r.finish()?;
    let vectors = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        flat.chunks_exact(dim).map(<[f64]>::to_vec).collect()
    };
    Ok(Embeddings { dim, vectors })
}

/// Reads a file and decodes it, attaching the path to any error.
pub fn read_file<T>(path: &Path, decode: impl FnOnce(&[u8]) -> Result<T, FormatError>) -> Result<T, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes).map_err(|source| DataError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
