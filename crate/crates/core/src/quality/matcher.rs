use thiserror::Error;

use crate::data::binary::Grid;

use super::QualityError;

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, QualityError> {
        if height.checked_mul(width) != Some(pixels.len()) {
            return Err(QualityError::ShapeMismatch(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    /// Frame `f` of a grid stack.
    pub fn from_grid_frame(grid: &Grid, f: usize) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            pixels: grid.frame(f).to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub center: (usize, usize),
    pub side: (usize, usize),
    pub ssd: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MatcherError {
    #[error("view heights differ: center {center}, side {side}")]
    HeightMismatch { center: usize, side: usize },
    #[error("{0}")]
    Plugin(String),
}

/// A deterministic correspondence finder between the center view and a side
/// view. Learned matchers plug in through this trait.
pub trait Matcher: Send + Sync {
    fn correspondences(&self, center: &ImageGrid, side: &ImageGrid) -> Result<Vec<Correspondence>, MatcherError>;
}

/// Exhaustive block matcher.
///
/// Tiles the center view with `patch`×`patch` blocks every `stride` pixels and
/// searches the side view along the same rows (± `vertical_radius`) for the
/// position with the lowest sum of squared differences. A block counts as
/// matched when that SSD is at most `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatcher {
    pub patch: usize,
    pub stride: usize,
    pub vertical_radius: usize,
    pub tau: f64,
}

impl Default for PatchMatcher {
    fn default() -> Self {
        Self::with_intensity(8, 8, 1.0)
    }
}

impl PatchMatcher {
    /// Threshold scaled to `1e-6 × patch pixels × max_intensity²`.
    pub fn with_intensity(patch: usize, stride: usize, max_intensity: f64) -> Self {
        Self {
            patch,
            stride,
            vertical_radius: 0,
            tau: 1e-6 * (patch * patch) as f64 * max_intensity * max_intensity,
        }
    }

    fn ssd(
        &self,
        center: &ImageGrid,
        (cx, cy): (usize, usize),
        side: &ImageGrid,
        (sx, sy): (usize, usize),
        cutoff: f64,
    ) -> f64 {
        let mut acc = 0.0;
        for dy in 0..self.patch {
            let crow = (cy + dy) * center.width + cx;
            let srow = (sy + dy) * side.width + sx;
            let c = &center.pixels[crow..crow + self.patch];
            let s = &side.pixels[srow..srow + self.patch];
            for (a, b) in c.iter().zip(s) {
                acc += (a - b) * (a - b);
            }
            if acc > cutoff {
                return acc;
            }
        }
        acc
    }
}

impl Matcher for PatchMatcher {
    fn correspondences(&self, center: &ImageGrid, side: &ImageGrid) -> Result<Vec<Correspondence>, MatcherError> {
        if center.height != side.height {
            return Err(MatcherError::HeightMismatch {
                center: center.height,
                side: side.height,
            });
        }
        if self.patch == 0 || self.stride == 0 {
            return Err(MatcherError::Plugin("patch and stride must be positive".into()));
        }
        let p = self.patch;
        if center.width < p || center.height < p || side.width < p {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for cy in (0..=center.height - p).step_by(self.stride) {
            let y_lo = cy.saturating_sub(self.vertical_radius);
            let y_hi = (cy + self.vertical_radius).min(side.height - p);
            for cx in (0..=center.width - p).step_by(self.stride) {
                // (ssd, distance from the block's own position, x, y); lexicographic minimum wins.
                let mut best: Option<(f64, usize, usize, usize)> = None;
                for sy in y_lo..=y_hi {
                    for sx in 0..=side.width - p {
                        let cutoff = best.map_or(f64::INFINITY, |b| b.0);
                        let ssd = self.ssd(center, (cx, cy), side, (sx, sy), cutoff);
                        let dist = cx.abs_diff(sx) + cy.abs_diff(sy);
                        let cand = (ssd, dist, sx, sy);
                        let better = match best {
                            None => true,
                            Some(b) => ssd < b.0 || (ssd == b.0 && dist < b.1),
                        };
                        if better {
                            best = Some(cand);
                        }
                    }
                }
                if let Some((ssd, _, sx, sy)) = best {
                    if ssd <= self.tau {
                        out.push(Correspondence {
                            center: (cx, cy),
                            side: (sx, sy),
                            ssd,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Number of correspondences the matcher finds between two views.
pub fn pixel_match_count(center: &ImageGrid, side: &ImageGrid, matcher: &dyn Matcher) -> Result<usize, MatcherError> {
    Ok(matcher.correspondences(center, side)?.len())
}

/// Per-frame counts for both view pairs and their pooled mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// `(center↔left, center↔right)` per frame.
    pub per_frame_counts: Vec<(usize, usize)>,
    pub mat_pix: f64,
}

pub fn match_report(
    center: &Grid,
    left: &Grid,
    right: &Grid,
    matcher: &dyn Matcher,
) -> Result<MatchReport, QualityError> {
    if center.frames != left.frames || center.frames != right.frames {
        return Err(QualityError::ShapeMismatch(format!(
            "view frame counts differ: {} / {} / {}",
            center.frames, left.frames, right.frames
        )));
    }
    if center.frames == 0 {
        return Err(QualityError::ShapeMismatch("views have no frames".into()));
    }
    let mut per_frame_counts = Vec::with_capacity(center.frames);
    for f in 0..center.frames {
        let c = ImageGrid::from_grid_frame(center, f);
        let wrap = |source| QualityError::MatcherFailure { frame: f, source };
        let l = pixel_match_count(&c, &ImageGrid::from_grid_frame(left, f), matcher).map_err(wrap)?;
        let r = pixel_match_count(&c, &ImageGrid::from_grid_frame(right, f), matcher).map_err(wrap)?;
        per_frame_counts.push((l, r));
    }
    let total: usize = per_frame_counts.iter().map(|(l, r)| l + r).sum();
    let mat_pix = total as f64 / (2 * per_frame_counts.len()) as f64;
    Ok(MatchReport {
        per_frame_counts,
        mat_pix,
    })
}
